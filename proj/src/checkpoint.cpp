#include "bone/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace bone {

namespace {

constexpr char kMagic[8] = {'B', 'O', 'N', 'E', 'C', 'K', 'P', '1'};

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  throw std::invalid_argument("unknown dtype '" + dtype + "'");
}

void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json manifest;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& rec : ckpt.tensors) {
    const std::uint64_t expect = shape_numel(rec.shape) * dtype_size(rec.dtype);
    if (rec.bytes.size() != expect) {
      throw std::invalid_argument("tensor '" + rec.name + "' has " +
                                  std::to_string(rec.bytes.size()) +
                                  " bytes, expected " + std::to_string(expect));
    }
    manifest["tensors"].push_back({{"name", rec.name},
                                   {"shape", rec.shape},
                                   {"dtype", rec.dtype},
                                   {"byte_offset", offset},
                                   {"byte_length", rec.bytes.size()}});
    offset += rec.bytes.size();
  }
  manifest["metadata"] =
      ckpt.metadata.is_null() ? nlohmann::json::object() : ckpt.metadata;

  const std::string mjson = manifest.dump();
  std::string header(kMagic, sizeof(kMagic));
  put_u64_le(header, mjson.size());

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    out.write(header.data(), std::streamsize(header.size()));
    out.write(mjson.data(), std::streamsize(mjson.size()));
    for (const auto& rec : ckpt.tensors) {
      out.write(reinterpret_cast<const char*>(rec.bytes.data()),
                std::streamsize(rec.bytes.size()));
    }
    if (!out) throw std::runtime_error("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("cannot rename '" + tmp + "' to '" + path + "'");
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<std::uint8_t> file((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (file.size() < 16 || std::memcmp(file.data(), kMagic, 8) != 0) {
    throw std::runtime_error("'" + path + "' is not a checkpoint file");
  }
  const std::uint64_t mlen = get_u64_le(file.data() + 8);
  if (16 + mlen > file.size()) {
    throw std::runtime_error("malformed manifest: length exceeds file size");
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(file.begin() + 16, file.begin() + 16 + long(mlen));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed manifest: ") + e.what());
  }
  if (!manifest.contains("tensors") || !manifest["tensors"].is_array()) {
    throw std::runtime_error("malformed manifest: missing tensor list");
  }

  const std::uint8_t* blob = file.data() + 16 + mlen;
  const std::uint64_t blob_size = file.size() - 16 - mlen;

  Checkpoint ckpt;
  ckpt.metadata = manifest.value("metadata", nlohmann::json::object());
  std::uint64_t prev_end = 0;
  for (const auto& entry : manifest["tensors"]) {
    TensorRecord rec;
    try {
      rec.name = entry.at("name").get<std::string>();
      rec.shape = entry.at("shape").get<Shape>();
      rec.dtype = entry.at("dtype").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(std::string("malformed manifest entry: ") + e.what());
    }
    const std::uint64_t off = entry.at("byte_offset").get<std::uint64_t>();
    const std::uint64_t len = entry.at("byte_length").get<std::uint64_t>();
    if (len != shape_numel(rec.shape) * dtype_size(rec.dtype)) {
      throw std::runtime_error("manifest length mismatch for tensor '" + rec.name + "'");
    }
    if (off < prev_end) {
      throw std::runtime_error("overlapping blob ranges at tensor '" + rec.name + "'");
    }
    if (off + len > blob_size) {
      throw std::runtime_error("truncated blob: tensor '" + rec.name +
                               "' extends past end of file");
    }
    prev_end = off + len;
    rec.bytes.assign(blob + off, blob + off + len);
    ckpt.tensors.push_back(std::move(rec));
  }
  return ckpt;
}

void write_loss_log(const std::string& path,
                    const std::vector<std::pair<std::size_t, double>>& entries) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + tmp + "' for writing");
    out << "step,loss\n";
    char buf[64];
    for (const auto& [step, loss] : entries) {
      std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", step, loss);
      out << buf;
    }
    if (!out) throw std::runtime_error("write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("cannot rename '" + tmp + "' to '" + path + "'");
  }
}

std::vector<std::pair<std::size_t, double>> read_loss_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line) || line != "step,loss") {
    throw std::runtime_error("'" + path + "' is not a loss log");
  }
  std::vector<std::pair<std::size_t, double>> entries;
  std::size_t prev = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw std::runtime_error("malformed row in '" + path + "': " + line);
    }
    const std::size_t step = std::stoull(line.substr(0, comma));
    const double loss = std::stod(line.substr(comma + 1));
    if (!entries.empty() && step <= prev) {
      throw std::runtime_error("non-increasing steps in '" + path + "'");
    }
    entries.emplace_back(step, loss);
    prev = step;
  }
  return entries;
}

}  // namespace bone
