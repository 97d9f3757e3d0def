#include "fogseg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>

#include <json.hpp>

#include "fogseg/imageio.hpp"

using ordered_json = nlohmann::ordered_json;

namespace fogseg {

namespace {

constexpr char kMagic[8] = {'F', 'S', 'C', 'K', 'P', 'T', '0', '1'};

template <typename T>
void put(std::string& out, T v) {
  static_assert(std::endian::native == std::endian::little);
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(const std::string& in, size_t& off, const std::string& path) {
  if (off + sizeof(T) > in.size()) throw DataError("truncated checkpoint: " + path);
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

}  // namespace

std::string arch_to_json(const ArchConfig& cfg) {
  ordered_json j;
  j["n_stages"] = cfg.n_stages;
  j["stage_channels"] = cfg.stage_channels;
  j["num_classes"] = cfg.num_classes;
  j["decoder_depth"] = to_string(cfg.decoder_depth);
  j["dfnet_out_channels"] = cfg.dfnet_out_channels;
  return j.dump();
}

ArchConfig arch_from_json(const std::string& text) {
  ArchConfig cfg;
  try {
    ordered_json j = ordered_json::parse(text);
    cfg.n_stages = j.at("n_stages").get<int>();
    cfg.stage_channels = j.at("stage_channels").get<std::vector<int>>();
    cfg.num_classes = j.at("num_classes").get<int>();
    const std::string d = j.at("decoder_depth").get<std::string>();
    if (d == "light")
      cfg.decoder_depth = DecoderDepth::light;
    else if (d == "heavy")
      cfg.decoder_depth = DecoderDepth::heavy;
    else
      throw DataError("unknown decoder_depth: " + d);
    cfg.dfnet_out_channels = j.at("dfnet_out_channels").get<int>();
  } catch (const ordered_json::exception& e) {
    throw DataError(std::string("arch config parse failure: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

void save_checkpoint(const std::string& path, const ParamSet& ps, CheckpointMeta meta) {
  if (!ps.all_finite()) throw NumericError("checkpoint save: non-finite parameter");
  if (meta.ckpt_id.empty()) {
    uint64_t h = ps.fingerprint();
    h = fnv1a64(meta.phase, h);
    h = mix_seed(h, uint64_t(meta.iteration));
    h = mix_seed(h, meta.seed);
    meta.ckpt_id = hex64(h);
  }

  ordered_json j;
  j["phase"] = meta.phase;
  j["seed"] = meta.seed;
  j["iteration"] = meta.iteration;
  j["frozen"] = meta.frozen;
  j["ckpt_id"] = meta.ckpt_id;
  j["arch"] = meta.arch_json;
  j["config"] = meta.config_json;
  j["provenance"] = meta.provenance;
  const std::string mjson = j.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<uint64_t>(out, mjson.size());
  out += mjson;
  put<uint64_t>(out, ps.size());
  for (const auto& [name, t] : ps.items()) {
    put<uint32_t>(out, uint32_t(name.size()));
    out += name;
    put<uint32_t>(out, uint32_t(t.ndim()));
    for (int d : t.dims()) put<int32_t>(out, d);
    put<uint64_t>(out, uint64_t(t.numel()));
    out.append(reinterpret_cast<const char*>(t.data()), size_t(t.numel()) * sizeof(float));
  }
  atomic_write_file(path, out);
}

std::pair<ParamSet, CheckpointMeta> load_checkpoint(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IntegrityError("missing checkpoint: " + path);
  const std::string in = read_file_bytes(path);
  if (in.size() < sizeof(kMagic) || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0)
    throw DataError("bad checkpoint magic: " + path);
  size_t off = sizeof(kMagic);

  const uint64_t mlen = take<uint64_t>(in, off, path);
  if (off + mlen > in.size()) throw DataError("truncated checkpoint: " + path);
  const std::string mjson = in.substr(off, mlen);
  off += mlen;

  CheckpointMeta meta;
  try {
    ordered_json j = ordered_json::parse(mjson);
    meta.phase = j.at("phase").get<std::string>();
    meta.seed = j.at("seed").get<uint64_t>();
    meta.iteration = j.at("iteration").get<int64_t>();
    meta.frozen = j.at("frozen").get<bool>();
    meta.ckpt_id = j.at("ckpt_id").get<std::string>();
    meta.arch_json = j.at("arch").get<std::string>();
    meta.config_json = j.at("config").get<std::string>();
    meta.provenance = j.at("provenance").get<std::string>();
  } catch (const ordered_json::exception& e) {
    throw DataError(std::string("checkpoint metadata parse failure: ") + e.what());
  }

  ParamSet ps;
  const uint64_t n = take<uint64_t>(in, off, path);
  for (uint64_t r = 0; r < n; ++r) {
    const uint32_t name_len = take<uint32_t>(in, off, path);
    if (off + name_len > in.size()) throw DataError("truncated checkpoint: " + path);
    const std::string name = in.substr(off, name_len);
    off += name_len;
    const uint32_t ndim = take<uint32_t>(in, off, path);
    if (ndim > 8) throw DataError("implausible tensor rank in checkpoint: " + path);
    std::vector<int> dims(ndim);
    for (uint32_t d = 0; d < ndim; ++d) dims[d] = take<int32_t>(in, off, path);
    const uint64_t numel = take<uint64_t>(in, off, path);
    if (int64_t(numel) != Tensorf::count(dims))
      throw DataError("shape/count mismatch in checkpoint record " + name);
    if (off + numel * sizeof(float) > in.size())
      throw DataError("truncated checkpoint payload: " + path);
    std::vector<float> vals(numel);
    std::memcpy(vals.data(), in.data() + off, numel * sizeof(float));
    off += numel * sizeof(float);
    ps.add(name, Tensorf::from(std::move(dims), std::move(vals)));
  }
  if (off != in.size()) throw DataError("trailing bytes in checkpoint: " + path);
  return {std::move(ps), std::move(meta)};
}

}  // namespace fogseg
