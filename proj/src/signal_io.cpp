#include "tweak/signal_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

namespace tweak {

namespace fs = std::filesystem;
using nlohmann::json;

void IQRecording::validate() const {
  if (samples.empty()) throw Error("empty recording");
  if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz))
    throw Error("sample_rate_hz must be positive");
  if (device_id < 0) throw Error("device_id must be >= 0");
}

void FrameExample::validate() const {
  if (length == 0 || data.size() != kFrameChannels * length)
    throw Error("frame must be 2 x " + std::to_string(length));
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i]))
      throw Error("non-finite frame entry at index " + std::to_string(i));
  }
}

LabeledDataset::LabeledDataset(std::vector<FrameExample> frames, std::string domain_id)
    : frames_(std::move(frames)), domain_id_(std::move(domain_id)) {
  std::set<DeviceId> ids;
  for (const auto& f : frames_) {
    f.validate();
    if (f.domain_id != domain_id_)
      throw Error("frame domain '" + f.domain_id + "' differs from dataset domain '" +
                  domain_id_ + "'");
    ids.insert(f.device_id);
  }
  device_ids_.assign(ids.begin(), ids.end());
}

std::vector<FrameExample> LabeledDataset::frames_of(DeviceId id) const {
  std::vector<FrameExample> out;
  for (const auto& f : frames_)
    if (f.device_id == id) out.push_back(f);
  return out;
}

std::map<DeviceId, std::vector<FrameExample>> LabeledDataset::by_device() const {
  std::map<DeviceId, std::vector<FrameExample>> out;
  for (const auto& f : frames_) out[f.device_id].push_back(f);
  return out;
}

std::size_t LabeledDataset::count_of(DeviceId id) const {
  return static_cast<std::size_t>(std::count_if(
      frames_.begin(), frames_.end(), [id](const FrameExample& f) { return f.device_id == id; }));
}

LabeledDataset LabeledDataset::restrict_to(std::span<const DeviceId> ids) const {
  std::set<DeviceId> keep(ids.begin(), ids.end());
  std::vector<FrameExample> out;
  for (const auto& f : frames_)
    if (keep.count(f.device_id)) out.push_back(f);
  return LabeledDataset(std::move(out), domain_id_);
}

// ---- raw IQ ---------------------------------------------------------------

namespace {

float decode_le_f32(const unsigned char* p) {
  std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                    (static_cast<std::uint32_t>(p[2]) << 16) |
                    (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(u);
}

void encode_le_f32(float v, char* p) {
  auto u = std::bit_cast<std::uint32_t>(v);
  p[0] = static_cast<char>(u & 0xff);
  p[1] = static_cast<char>((u >> 8) & 0xff);
  p[2] = static_cast<char>((u >> 16) & 0xff);
  p[3] = static_cast<char>((u >> 24) & 0xff);
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

IQRecording load_raw_iq(const fs::path& path, double sample_rate_hz, DeviceId device_id,
                        const std::string& domain_id) {
  if (!fs::exists(path)) throw Error("missing IQ file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open IQ file: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.empty()) throw Error("empty recording: " + path.string());
  if (bytes.size() % 8 != 0)
    throw Error("truncated IQ file (" + std::to_string(bytes.size()) +
                " bytes is not a multiple of 8): " + path.string());

  IQRecording rec;
  rec.device_id = device_id;
  rec.domain_id = domain_id;
  rec.sample_rate_hz = sample_rate_hz;
  const std::size_t n = bytes.size() / 8;
  rec.samples.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const float i = decode_le_f32(&bytes[8 * k]);
    const float q = decode_le_f32(&bytes[8 * k + 4]);
    if (!std::isfinite(i) || !std::isfinite(q))
      throw Error("non-finite sample at index " + std::to_string(k) + " in " + path.string());
    rec.samples[k] = {i, q};
  }
  rec.validate();
  return rec;
}

void save_raw_iq(const fs::path& path, const IQRecording& rec) {
  rec.validate();
  std::string buf(rec.samples.size() * 8, '\0');
  for (std::size_t k = 0; k < rec.samples.size(); ++k) {
    const auto& z = rec.samples[k];
    if (!std::isfinite(z.real()) || !std::isfinite(z.imag()))
      throw Error("non-finite sample at index " + std::to_string(k));
    encode_le_f32(static_cast<float>(z.real()), &buf[8 * k]);
    encode_le_f32(static_cast<float>(z.imag()), &buf[8 * k + 4]);
  }
  write_file_atomic(path, buf);
}

fs::path sidecar_path(const fs::path& iq_path) {
  fs::path p = iq_path;
  p.replace_extension(".meta.json");
  return p;
}

void write_sidecar(const fs::path& iq_path, const SidecarMetadata& m) {
  json j = {{"device_id", m.device_id},
            {"domain_id", m.domain_id},
            {"sample_rate_hz", m.sample_rate_hz},
            {"center_frequency_hz", m.center_frequency_hz},
            {"lora_config", m.lora_config},
            {"notes", m.notes}};
  write_file_atomic(sidecar_path(iq_path), j.dump(2) + "\n");
}

SidecarMetadata read_sidecar(const fs::path& iq_path) {
  const auto p = sidecar_path(iq_path);
  json j;
  try {
    j = json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw Error("bad sidecar " + p.string() + ": " + e.what());
  }
  SidecarMetadata m;
  m.device_id = j.at("device_id").get<DeviceId>();
  m.domain_id = j.at("domain_id").get<std::string>();
  m.sample_rate_hz = j.at("sample_rate_hz").get<double>();
  m.center_frequency_hz = j.value("center_frequency_hz", 0.0);
  m.lora_config = j.value("lora_config", std::string{});
  m.notes = j.value("notes", std::string{});
  return m;
}

IQRecording load_recording_with_sidecar(const fs::path& iq_path) {
  const auto meta = read_sidecar(iq_path);
  auto rec = load_raw_iq(iq_path, meta.sample_rate_hz, meta.device_id, meta.domain_id);
  rec.metadata["center_frequency_hz"] = std::to_string(meta.center_frequency_hz);
  rec.metadata["lora_config"] = meta.lora_config;
  rec.metadata["notes"] = meta.notes;
  return rec;
}

std::vector<ManifestEntry> read_manifest(const fs::path& manifest_path) {
  json j;
  try {
    j = json::parse(read_text(manifest_path));
  } catch (const json::exception& e) {
    throw Error("bad manifest " + manifest_path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw Error("manifest must be a JSON list: " + manifest_path.string());
  const auto base = manifest_path.parent_path();
  std::vector<ManifestEntry> out;
  for (const auto& e : j) {
    ManifestEntry m;
    fs::path p = e.at("path").get<std::string>();
    m.path = p.is_absolute() ? p : base / p;
    m.device_id = e.at("device_id").get<DeviceId>();
    m.domain_id = e.at("domain_id").get<std::string>();
    out.push_back(std::move(m));
  }
  return out;
}

void write_manifest(const fs::path& manifest_path, const std::vector<ManifestEntry>& entries) {
  json j = json::array();
  for (const auto& e : entries)
    j.push_back({{"path", e.path.generic_string()},
                 {"device_id", e.device_id},
                 {"domain_id", e.domain_id}});
  write_file_atomic(manifest_path, j.dump(2) + "\n");
}

// ---- framing ----------------------------------------------------------------

std::vector<FrameExample> frame_recording(const IQRecording& rec, std::size_t frame_len,
                                          std::size_t stride) {
  if (frame_len == 0 || stride == 0) throw Error("frame_len and stride must be positive");
  const std::size_t n = rec.samples.size();
  if (n < frame_len)
    throw Error("recording of " + std::to_string(n) + " samples is shorter than frame_len " +
                std::to_string(frame_len));
  const std::size_t count = (n - frame_len) / stride + 1;
  std::vector<FrameExample> frames;
  frames.reserve(count);
  for (std::size_t f = 0; f < count; ++f) {
    FrameExample fr(frame_len, rec.device_id, rec.domain_id);
    const std::size_t off = f * stride;
    for (std::size_t t = 0; t < frame_len; ++t) {
      fr.in_phase(t) = rec.samples[off + t].real();
      fr.quadrature(t) = rec.samples[off + t].imag();
    }
    frames.push_back(std::move(fr));
  }
  return frames;
}

std::size_t train_count_for(std::size_t count, double train_fraction) {
  auto k = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(count) + 1e-9));
  return std::clamp<std::size_t>(k, 1, count - 1);
}

DatasetSplit split_dataset(const LabeledDataset& ds, double train_fraction, std::uint64_t seed,
                           SplitMode mode) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw Error("train_fraction must lie in (0, 1)");

  std::map<DeviceId, std::vector<std::size_t>> idx;
  for (std::size_t i = 0; i < ds.frames().size(); ++i) idx[ds.frames()[i].device_id].push_back(i);

  std::vector<char> to_train(ds.size(), 0);
  for (auto& [dev, rows] : idx) {
    if (rows.size() < 2)
      throw Error("device " + std::to_string(dev) + " has fewer than 2 frames");
    const std::size_t k = train_count_for(rows.size(), train_fraction);
    std::vector<std::size_t> chosen = rows;
    if (mode == SplitMode::random) {
      std::mt19937_64 rng(derive_seed(seed, "split", static_cast<std::uint64_t>(dev)));
      fisher_yates(chosen, rng);
    }
    for (std::size_t j = 0; j < k; ++j) to_train[chosen[j]] = 1;
  }

  std::vector<FrameExample> train, test;
  for (std::size_t i = 0; i < ds.size(); ++i)
    (to_train[i] ? train : test).push_back(ds.frames()[i]);
  return {LabeledDataset(std::move(train), ds.domain_id()),
          LabeledDataset(std::move(test), ds.domain_id())};
}

// ---- normalization ------------------------------------------------------------

NormalizeMode parse_normalize_mode(const std::string& s) {
  if (s == "none") return NormalizeMode::none;
  if (s == "unit-power" || s == "unit_power") return NormalizeMode::unit_power;
  throw Error("unknown normalization mode '" + s + "'");
}

std::string to_string(NormalizeMode m) {
  return m == NormalizeMode::none ? "none" : "unit-power";
}

double frame_rms(const FrameExample& frame) {
  double acc = 0.0;
  for (double v : frame.data) acc += v * v;
  return std::sqrt(acc / static_cast<double>(frame.data.size()));
}

FrameExample normalize_frame(const FrameExample& frame, NormalizeMode mode) {
  if (mode == NormalizeMode::none) return frame;
  const double rms = frame_rms(frame);
  if (rms == 0.0) return frame;
  FrameExample out = frame;
  for (double& v : out.data) v /= rms;
  return out;
}

LabeledDataset load_manifest_dataset(const fs::path& manifest_path, std::size_t frame_len,
                                     std::size_t stride, NormalizeMode mode) {
  const auto entries = read_manifest(manifest_path);
  if (entries.empty()) throw Error("manifest is empty: " + manifest_path.string());
  const std::string domain = entries.front().domain_id;
  std::vector<FrameExample> frames;
  for (const auto& e : entries) {
    if (e.domain_id != domain)
      throw Error("manifest mixes domains '" + domain + "' and '" + e.domain_id + "'");
    double rate = 1e6;
    if (fs::exists(sidecar_path(e.path))) rate = read_sidecar(e.path).sample_rate_hz;
    auto rec = load_raw_iq(e.path, rate, e.device_id, e.domain_id);
    for (auto& f : frame_recording(rec, frame_len, stride))
      frames.push_back(normalize_frame(f, mode));
  }
  return LabeledDataset(std::move(frames), domain);
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace tweak
