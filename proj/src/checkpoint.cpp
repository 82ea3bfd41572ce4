#include "mtdqn/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "mtdqn/error.hpp"

namespace mtdqn {

namespace {

constexpr char kMagic[8] = {'M', 'T', 'D', 'Q', 'N', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_doubles(std::ostream& os, std::span<const double> v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void write_tensor(std::ostream& os, const NamedParam& p) {
  write_string(os, p.name);
  write_u32(os, static_cast<std::uint32_t>(p.tensor.rows()));
  write_u32(os, static_cast<std::uint32_t>(p.tensor.cols()));
  write_doubles(os, p.tensor.values());
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw FormatError("checkpoint: truncated file");
  return v;
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw FormatError("checkpoint: truncated file");
  return v;
}

std::vector<double> read_doubles(std::istream& is, std::size_t n) {
  std::vector<double> v(n);
  is.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw FormatError("checkpoint: truncated file");
  return v;
}

std::string read_string(std::istream& is) {
  const std::uint32_t len = read_u32(is);
  std::string s(len, '\0');
  is.read(s.data(), len);
  if (!is) throw FormatError("checkpoint: truncated file");
  return s;
}

CheckpointTensor read_tensor(std::istream& is) {
  CheckpointTensor t;
  t.name = read_string(is);
  t.rows = read_u32(is);
  t.cols = read_u32(is);
  t.values = read_doubles(is, t.rows * t.cols);
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, std::uint64_t config_hash,
                     std::uint64_t train_step, const std::string& config_json,
                     std::span<const NamedParam> trainable,
                     const AdamOptimizer* optimizer,
                     std::span<const NamedParam> aux) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("save_checkpoint: cannot open " + path);
  os.write(kMagic, sizeof(kMagic));
  write_u32(os, kVersion);
  write_u64(os, config_hash);
  write_u64(os, train_step);
  write_string(os, config_json);
  write_u32(os, static_cast<std::uint32_t>(trainable.size()));
  for (const NamedParam& p : trainable) write_tensor(os, p);
  if (optimizer != nullptr) {
    if (optimizer->params().size() != trainable.size()) {
      throw ContractError("save_checkpoint: optimizer/parameter count mismatch");
    }
    os.put(1);
    write_u64(os, optimizer->step_count());
    auto first = optimizer->first_moments();
    auto second = optimizer->second_moments();
    for (std::size_t i = 0; i < trainable.size(); ++i) {
      write_doubles(os, first[i]);
      write_doubles(os, second[i]);
    }
  } else {
    os.put(0);
  }
  write_u32(os, static_cast<std::uint32_t>(aux.size()));
  for (const NamedParam& p : aux) write_tensor(os, p);
  if (!os) throw IoError("save_checkpoint: write failure for " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("load_checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("load_checkpoint: bad magic in " + path);
  }
  const std::uint32_t version = read_u32(is);
  if (version != kVersion) {
    throw FormatError("load_checkpoint: unsupported version " +
                      std::to_string(version));
  }
  CheckpointData data;
  data.config_hash = read_u64(is);
  data.train_step = read_u64(is);
  data.config_json = read_string(is);
  const std::uint32_t n_trainable = read_u32(is);
  data.trainable.reserve(n_trainable);
  for (std::uint32_t i = 0; i < n_trainable; ++i) {
    data.trainable.push_back(read_tensor(is));
  }
  const int has_optimizer = is.get();
  if (has_optimizer != 0 && has_optimizer != 1) {
    throw FormatError("load_checkpoint: bad optimizer flag");
  }
  if (has_optimizer == 1) {
    data.adam_step = read_u64(is);
    for (const CheckpointTensor& t : data.trainable) {
      data.adam_first.push_back(read_doubles(is, t.rows * t.cols));
      data.adam_second.push_back(read_doubles(is, t.rows * t.cols));
    }
  }
  const std::uint32_t n_aux = read_u32(is);
  data.aux.reserve(n_aux);
  for (std::uint32_t i = 0; i < n_aux; ++i) data.aux.push_back(read_tensor(is));
  return data;
}

void restore_params(std::span<const CheckpointTensor> saved,
                    std::span<NamedParam> live) {
  if (saved.size() != live.size()) {
    throw FormatError("restore_params: expected " + std::to_string(live.size()) +
                      " tensors, checkpoint has " + std::to_string(saved.size()));
  }
  for (std::size_t i = 0; i < live.size(); ++i) {
    if (saved[i].name != live[i].name) {
      throw FormatError("restore_params: tensor " + std::to_string(i) +
                        " is \"" + saved[i].name + "\", expected \"" +
                        live[i].name + "\"");
    }
    if (saved[i].rows != live[i].tensor.rows() ||
        saved[i].cols != live[i].tensor.cols()) {
      throw FormatError("restore_params: shape mismatch for " + saved[i].name);
    }
    auto dst = live[i].tensor.raw_values();
    std::copy(saved[i].values.begin(), saved[i].values.end(), dst.begin());
  }
}

}  // namespace mtdqn
