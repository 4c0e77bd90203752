#include "fqdet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fqdet::tc {

namespace {
using nlohmann::json;

void append_le(std::string& out, const Tensor& t) {
  // Little-endian IEEE-754 payload at the tensor's dtype width.
  if (t.dtype() == DType::Float64) {
    for (double v : t.data()) {
      char buf[8];
      std::memcpy(buf, &v, 8);
      out.append(buf, 8);
    }
  } else {
    for (double v : t.data()) {
      const float f = static_cast<float>(v);
      char buf[4];
      std::memcpy(buf, &f, 4);
      out.append(buf, 4);
    }
  }
}
}  // namespace

void save_archive(const std::string& path, const Archive& archive) {
  json manifest;
  manifest["meta"] = archive.meta;
  manifest["tensors"] = json::array();
  std::string payload;
  for (const auto& [name, t] : archive.tensors) {
    json entry;
    entry["name"] = name;
    entry["dtype"] = dtype_name(t.dtype());
    entry["shape"] = t.shape();
    entry["offset"] = payload.size();
    entry["bytes"] = static_cast<std::size_t>(t.numel()) * dtype_size(t.dtype());
    manifest["tensors"].push_back(entry);
    append_le(payload, t);
  }
  const std::string mtext = manifest.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_archive: cannot open " + path);
  f << "FQT1 " << mtext.size() << "\n" << mtext;
  f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!f) throw std::runtime_error("save_archive: write failed for " + path);
}

Archive load_archive(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("load_archive: cannot open " + path);
  std::string magic;
  std::size_t mlen = 0;
  f >> magic >> mlen;
  if (magic != "FQT1") throw std::runtime_error("load_archive: bad magic in " + path);
  f.get();  // newline after the header
  std::string mtext(mlen, '\0');
  f.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (!f) throw std::runtime_error("load_archive: truncated manifest in " + path);
  json manifest = json::parse(mtext);

  std::string payload((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  Archive archive;
  if (manifest.contains("meta")) {
    for (auto& [k, v] : manifest["meta"].items()) archive.meta[k] = v.get<std::string>();
  }
  std::size_t expected = 0;
  for (const auto& entry : manifest["tensors"]) {
    const std::string name = entry["name"].get<std::string>();
    const DType dtype = dtype_from_name(entry["dtype"].get<std::string>());
    const Shape shape = entry["shape"].get<Shape>();
    const std::size_t offset = entry["offset"].get<std::size_t>();
    const std::size_t bytes = entry["bytes"].get<std::size_t>();
    const std::size_t count = static_cast<std::size_t>(shape_numel(shape));
    if (bytes != count * dtype_size(dtype)) {
      throw std::runtime_error("load_archive: byte length of " + name + " disagrees with its shape");
    }
    if (offset + bytes > payload.size()) {
      throw std::runtime_error("load_archive: payload truncated at tensor " + name);
    }
    expected = std::max(expected, offset + bytes);

    Tensor t = Tensor::zeros(shape, dtype);
    if (dtype == DType::Float64) {
      for (std::size_t i = 0; i < count; ++i) {
        double v;
        std::memcpy(&v, payload.data() + offset + i * 8, 8);
        t.data()[i] = v;
      }
    } else {
      for (std::size_t i = 0; i < count; ++i) {
        float v;
        std::memcpy(&v, payload.data() + offset + i * 4, 4);
        t.data()[i] = static_cast<double>(v);
      }
    }
    archive.tensors.emplace_back(name, std::move(t));
  }
  if (expected != payload.size()) {
    throw std::runtime_error("load_archive: payload is " + std::to_string(payload.size()) +
                             " bytes, manifest expects " + std::to_string(expected));
  }
  return archive;
}

void save_params(const std::string& path, const ParamStore& params,
                 const std::map<std::string, std::string>& meta) {
  Archive archive;
  archive.meta = meta;
  for (const auto& [name, t] : params.items()) archive.tensors.emplace_back(name, t);
  save_archive(path, archive);
}

void load_params(const Archive& archive, ParamStore& params) {
  for (const auto& [name, t] : params.items()) {
    const Tensor* src = nullptr;
    for (const auto& [an, at] : archive.tensors) {
      if (an == name) {
        src = &at;
        break;
      }
    }
    if (!src) throw std::runtime_error("load_params: missing tensor " + name);
    if (src->dtype() != t.dtype() || src->shape() != t.shape()) {
      throw std::runtime_error("load_params: tensor " + name + " has shape " +
                               shape_str(src->shape()) + ", model expects " + shape_str(t.shape()));
    }
    params.find(name)->data() = src->data();
  }
}

}  // namespace fqdet::tc
