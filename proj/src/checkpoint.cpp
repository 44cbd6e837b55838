#include "dconv/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace dconv {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'V', '1'};

void put_u32(std::ostream& out, uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff),
                         static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

uint32_t get_u32(std::istream& in) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (!in) throw std::runtime_error("checkpoint truncated");
  return static_cast<uint32_t>(bytes[0]) | (static_cast<uint32_t>(bytes[1]) << 8) |
         (static_cast<uint32_t>(bytes[2]) << 16) | (static_cast<uint32_t>(bytes[3]) << 24);
}

void put_f32(std::ostream& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

float get_f32(std::istream& in) {
  const uint32_t bits = get_u32(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<uint32_t>(t->shape.size()));
    for (int d : t->shape) put_u32(out, static_cast<uint32_t>(d));
    for (float v : t->data) put_f32(out, v);
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a DCV1 checkpoint: " + path);

  std::vector<std::pair<std::string, Tensor>> out;
  while (true) {
    in.peek();
    if (in.eof()) break;
    const uint32_t name_len = get_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint32_t rank = get_u32(in);
    if (rank < 1 || rank > 4)
      throw std::runtime_error("checkpoint tensor '" + name + "' has rank " +
                               std::to_string(rank));
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(get_u32(in));
    Tensor t(shape);
    for (auto& v : t.data) v = get_f32(in);
    if (!in) throw std::runtime_error("checkpoint truncated in tensor '" + name + "'");
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

void save_model(const std::string& path, ModelParams& params, const AdamState* optimizer) {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  const auto named = params.named_tensors();
  for (const auto& [name, t] : named) tensors.emplace_back(name, t);

  // Optimizer moments are stored as extra tensors under the reserved prefix.
  std::vector<std::pair<std::string, Tensor>> extra;
  if (optimizer && optimizer->step > 0 && optimizer->slots.size() == named.size()) {
    Tensor step(Shape{1});
    step.data[0] = static_cast<float>(optimizer->step);
    extra.emplace_back("opt.adam.step", std::move(step));
    for (size_t i = 0; i < named.size(); ++i) {
      extra.emplace_back("opt.adam.m." + named[i].first,
                         Tensor(named[i].second->shape, optimizer->slots[i].m));
      extra.emplace_back("opt.adam.v." + named[i].first,
                         Tensor(named[i].second->shape, optimizer->slots[i].v));
    }
  }
  for (const auto& [name, t] : extra) tensors.emplace_back(name, &t);
  save_tensors(path, tensors);
}

std::vector<std::pair<std::string, Tensor>> load_model(const std::string& path,
                                                       ModelParams& params) {
  auto tensors = load_tensors(path);
  std::vector<std::pair<std::string, Tensor>> leftovers;

  auto find = [&](const std::string& name) -> Tensor* {
    for (auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  };

  for (auto& [name, dst] : params.named_tensors()) {
    Tensor* src = find(name);
    if (!src)
      throw std::runtime_error("checkpoint " + path + " is missing tensor '" + name + "'");
    if (src->shape != dst->shape)
      throw std::runtime_error("checkpoint tensor '" + name + "' has shape " +
                               shape_str(src->shape) + ", model expects " +
                               shape_str(dst->shape));
    dst->data = std::move(src->data);
  }
  for (auto& [name, t] : tensors)
    if (name.rfind("opt.", 0) == 0) leftovers.emplace_back(name, std::move(t));
  return leftovers;
}

}  // namespace dconv
