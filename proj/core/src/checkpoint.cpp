#include "pct/checkpoint.hpp"

#include <cstring>
#include <set>

#include "pct/io.hpp"

namespace pct::model {

namespace {

constexpr char kMagic[8] = {'P', 'C', 'T', 'C', 'K', 'P', 'T', '\0'};

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T get(const std::string& in, size_t& pos, const std::string& file) {
  if (pos + sizeof(T) > in.size()) throw LoadError("truncated checkpoint '" + file + "'");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

const char* dtype_name(torch::Dtype t) {
  if (t == torch::kFloat32) return "float32";
  if (t == torch::kFloat64) return "float64";
  if (t == torch::kInt64) return "int64";
  throw InvalidArgument("unsupported tensor dtype in checkpoint");
}

torch::Dtype dtype_of(const std::string& s, const std::string& file) {
  if (s == "float32") return torch::kFloat32;
  if (s == "float64") return torch::kFloat64;
  if (s == "int64") return torch::kInt64;
  throw LoadError("unknown tensor dtype '" + s + "' in '" + file + "'");
}

}  // namespace

void to_json(Json& j, const ModelConfig& v) {
  j = Json{{"stem_width", v.stem_width},   {"encoder_widths", v.encoder_widths},
           {"fpn_width", v.fpn_width},     {"bev_dim", v.bev_dim},
           {"pv_classes", v.pv_classes},   {"num_classes", v.num_classes},
           {"image_height", v.image_height}, {"image_width", v.image_width},
           {"grid", v.grid},               {"projection", v.projection},
           {"norm_groups", v.norm_groups}, {"double_precision", v.double_precision}};
}

void from_json(const Json& j, ModelConfig& v) {
  reject_unknown_keys(j,
                      {"stem_width", "encoder_widths", "fpn_width", "bev_dim", "pv_classes", "num_classes",
                       "image_height", "image_width", "grid", "projection", "norm_groups", "double_precision"},
                      "model");
  ModelConfig d;
  v.stem_width = j.value("stem_width", d.stem_width);
  v.encoder_widths = j.value("encoder_widths", d.encoder_widths);
  v.fpn_width = j.value("fpn_width", d.fpn_width);
  v.bev_dim = j.value("bev_dim", d.bev_dim);
  v.pv_classes = j.value("pv_classes", d.pv_classes);
  v.num_classes = j.value("num_classes", d.num_classes);
  v.image_height = j.value("image_height", d.image_height);
  v.image_width = j.value("image_width", d.image_width);
  v.grid = j.contains("grid") ? j.at("grid").get<geom::BevGridSpec>() : d.grid;
  v.projection = j.value("projection", d.projection);
  v.norm_groups = j.value("norm_groups", d.norm_groups);
  v.double_precision = j.value("double_precision", d.double_precision);
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
  for (const auto& [name, t] : tensors)
    if (name.rfind(prefix + ".", 0) == 0) return true;
  return false;
}

const torch::Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Json header;
  header["format_version"] = kCheckpointVersion;
  header["config"] = ckpt.config;
  header["meta"] = ckpt.meta;
  std::string payload;
  Json table = Json::array();
  for (const auto& [name, tensor] : ckpt.tensors) {
    auto t = tensor.detach().contiguous().cpu();
    const size_t nbytes = t.numel() * t.element_size();
    table.push_back({{"name", name},
                     {"dtype", dtype_name(t.scalar_type())},
                     {"shape", t.sizes().vec()},
                     {"offset", payload.size()},
                     {"nbytes", nbytes}});
    payload.append(static_cast<const char*>(t.data_ptr()), nbytes);
  }
  header["tensors"] = table;
  header["optimizer"] = {{"offset", payload.size()}, {"nbytes", ckpt.optimizer_state.size()}};
  payload += ckpt.optimizer_state;

  const std::string hdr = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<uint32_t>(out, kCheckpointVersion);
  put<uint64_t>(out, hdr.size());
  out += hdr;
  out += payload;
  io::write_text(path, out);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  const std::string file = path.string();
  const std::string data = io::read_text(path);
  if (data.size() < sizeof(kMagic) || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0)
    throw LoadError("'" + file + "' is not a checkpoint");
  size_t pos = sizeof(kMagic);
  const auto version = get<uint32_t>(data, pos, file);
  if (version != kCheckpointVersion)
    throw LoadError("unsupported checkpoint version " + std::to_string(version) + " in '" + file + "'");
  const auto hlen = get<uint64_t>(data, pos, file);
  if (pos + hlen > data.size()) throw LoadError("truncated checkpoint '" + file + "'");
  Checkpoint ckpt;
  Json header;
  try {
    header = Json::parse(data.substr(pos, hlen));
    ckpt.config = header.at("config").get<ModelConfig>();
    ckpt.meta = header.at("meta");
  } catch (const Json::exception& e) {
    throw LoadError("bad checkpoint header in '" + file + "': " + e.what());
  }
  pos += hlen;
  const size_t base = pos;
  const size_t payload = data.size() - base;
  for (const auto& e : header.at("tensors")) {
    const size_t off = e.at("offset"), nbytes = e.at("nbytes");
    if (off + nbytes > payload) throw LoadError("truncated checkpoint '" + file + "'");
    auto shape = e.at("shape").get<std::vector<int64_t>>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_of(e.at("dtype"), file)));
    if (static_cast<size_t>(t.numel() * t.element_size()) != nbytes)
      throw LoadError("tensor size mismatch in '" + file + "'");
    std::memcpy(t.data_ptr(), data.data() + base + off, nbytes);
    ckpt.tensors.emplace_back(e.at("name").get<std::string>(), t);
  }
  const size_t off = header.at("optimizer").at("offset"), nbytes = header.at("optimizer").at("nbytes");
  if (off + nbytes > payload) throw LoadError("truncated checkpoint '" + file + "'");
  ckpt.optimizer_state = data.substr(base + off, nbytes);
  return ckpt;
}

void store_model(Checkpoint& ckpt, BevSegModel& model, const std::string& prefix) {
  for (const auto& p : model->named_parameters()) ckpt.tensors.emplace_back(prefix + "." + p.key(), p.value().detach().clone());
  for (const auto& p : model->named_buffers()) ckpt.tensors.emplace_back(prefix + "." + p.key(), p.value().detach().clone());
}

void load_model(BevSegModel& model, const Checkpoint& ckpt, const std::string& prefix) {
  torch::NoGradGuard guard;
  std::set<std::string> expected;
  auto assign = [&](const std::string& key, torch::Tensor& dst) {
    const std::string name = prefix + "." + key;
    expected.insert(name);
    const auto* src = ckpt.find(name);
    if (!src) throw LoadError("checkpoint lacks tensor '" + name + "'");
    if (src->sizes() != dst.sizes())
      throw LoadError("shape mismatch for '" + name + "': checkpoint " + c10::str(src->sizes()) + ", model " +
                      c10::str(dst.sizes()));
    dst.copy_(*src);
  };
  for (auto& p : model->named_parameters()) assign(p.key(), p.value());
  for (auto& p : model->named_buffers()) assign(p.key(), p.value());
  for (const auto& [name, t] : ckpt.tensors)
    if (name.rfind(prefix + ".", 0) == 0 && !expected.count(name))
      throw LoadError("unexpected tensor '" + name + "' in checkpoint");
}

}  // namespace pct::model
