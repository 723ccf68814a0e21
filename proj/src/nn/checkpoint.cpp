#include "lanhar/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "lanhar/error.hpp"
#include "lanhar/sha256.hpp"
#include "lanhar/util.hpp"

namespace lanhar::nn {

using nlohmann::json;
using nlohmann::ordered_json;

void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<const Parameter*>& params,
                      const std::map<std::string, std::string>& metadata) {
  ordered_json header;
  ordered_json meta;
  for (const auto& [k, v] : metadata) meta[k] = v;
  meta["format"] = "lanhar-weights-v1";
  header["__metadata__"] = std::move(meta);

  size_t offset = 0;
  for (const Parameter* p : params) {
    const size_t bytes = static_cast<size_t>(p->value.size()) * sizeof(double);
    ordered_json entry;
    entry["dtype"] = "F64";
    entry["shape"] = {p->value.rows(), p->value.cols()};
    entry["data_offsets"] = {offset, offset + bytes};
    if (header.contains(p->name)) {
      raise(ErrorCode::Argument, "duplicate parameter name: " + p->name);
    }
    header[p->name] = std::move(entry);
    offset += bytes;
  }

  const std::string header_str = header.dump();
  std::string blob;
  blob.reserve(8 + header_str.size() + offset);
  uint64_t hlen = header_str.size();
  for (int i = 0; i < 8; ++i) blob.push_back(static_cast<char>((hlen >> (8 * i)) & 0xFF));
  blob += header_str;
  for (const Parameter* p : params) {
    const auto& m = p->value;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double v = m(r, c);
        char buf[sizeof(double)];
        std::memcpy(buf, &v, sizeof(double));
        blob.append(buf, sizeof(double));
      }
    }
  }
  write_text_file_atomic(path, blob);
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  const std::string blob = read_text_file(path);
  if (blob.size() < 8) raise(ErrorCode::Parse, "weight archive too short: " + path.string());
  uint64_t hlen = 0;
  for (int i = 0; i < 8; ++i) {
    hlen |= static_cast<uint64_t>(static_cast<unsigned char>(blob[static_cast<size_t>(i)]))
            << (8 * i);
  }
  if (8 + hlen > blob.size()) raise(ErrorCode::Parse, "corrupt weight archive header length");
  json header;
  try {
    header = json::parse(blob.substr(8, hlen));
  } catch (const json::parse_error& e) {
    raise(ErrorCode::Parse, std::string("weight archive header: ") + e.what());
  }

  CheckpointData out;
  const size_t payload_base = 8 + hlen;
  for (const auto& [name, entry] : header.items()) {
    if (name == "__metadata__") {
      for (const auto& [k, v] : entry.items()) out.metadata[k] = v.get<std::string>();
      continue;
    }
    if (entry.at("dtype").get<std::string>() != "F64") {
      raise(ErrorCode::Parse, "unsupported dtype for tensor " + name);
    }
    const auto rows = entry.at("shape").at(0).get<Eigen::Index>();
    const auto cols = entry.at("shape").at(1).get<Eigen::Index>();
    const auto begin = entry.at("data_offsets").at(0).get<size_t>();
    const auto end = entry.at("data_offsets").at(1).get<size_t>();
    const size_t expect = static_cast<size_t>(rows) * static_cast<size_t>(cols) * sizeof(double);
    if (end < begin || end - begin != expect || payload_base + end > blob.size()) {
      raise(ErrorCode::Parse, "bad data offsets for tensor " + name);
    }
    Matrix m(rows, cols);
    const char* src = blob.data() + payload_base + begin;
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        double v;
        std::memcpy(&v, src, sizeof(double));
        src += sizeof(double);
        m(r, c) = v;
      }
    }
    out.tensors.emplace(name, std::move(m));
  }
  return out;
}

void load_parameters(const CheckpointData& data, const std::vector<Parameter*>& params) {
  size_t used = 0;
  for (Parameter* p : params) {
    const auto it = data.tensors.find(p->name);
    if (it == data.tensors.end()) {
      raise(ErrorCode::Validation, "weight archive missing tensor: " + p->name);
    }
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols()) {
      raise(ErrorCode::Validation, "shape mismatch for tensor " + p->name);
    }
    p->value = it->second;
    p->grad = Matrix::Zero(p->value.rows(), p->value.cols());
    ++used;
  }
  if (used != data.tensors.size()) {
    raise(ErrorCode::Validation, "weight archive contains unknown tensors");
  }
}

std::string checkpoint_id(const std::filesystem::path& path) {
  return sha256_hex(read_text_file(path)).substr(0, 16);
}

void write_sidecar(const std::filesystem::path& archive_path, const ordered_json& doc) {
  write_text_file_atomic(archive_path.string() + ".json", doc.dump(2) + "\n");
}

json read_sidecar(const std::filesystem::path& archive_path) {
  const std::string text = read_text_file(archive_path.string() + ".json");
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    raise(ErrorCode::Parse, std::string("sidecar: ") + e.what());
  }
}

}  // namespace lanhar::nn
