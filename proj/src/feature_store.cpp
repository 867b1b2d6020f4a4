#include "gallop/feature_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>
#include <set>

#include "gallop/error.hpp"
#include "gallop/matrix.hpp"
#include "gallop/prompt_encoder.hpp"

namespace gallop {

namespace {

// Global features within this distance of unit norm are accepted as-is;
// up to kRenormTolerance they are silently renormalized.
constexpr double kUnitTolerance = 1e-5;
constexpr double kRenormTolerance = 1e-3;

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool has(std::size_t n) const { return bytes_.size() - pos_ >= n; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  template <typename U>
  U uint() {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
  std::span<const std::uint8_t> take(std::size_t n) {
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void check_class_names(const std::vector<std::string>& names, std::uint32_t num_classes, ErrorCode code) {
  if (names.size() != num_classes) {
    fail(code, "class_names: expected " + std::to_string(num_classes) + " entries, got " +
                   std::to_string(names.size()));
  }
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (n.empty()) fail(code, "class_names: empty class name");
    if (n.size() > 0xFFFF) fail(code, "class_names: name longer than 65535 bytes");
    if (!seen.insert(n).second) fail(code, "class_names: duplicate class name '" + n + "'");
  }
}

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

std::string record_tag(std::size_t i) { return "record " + std::to_string(i); }

void normalize_in_place(std::vector<double>& v) {
  const double n = l2_norm(std::span<const double>(v));
  for (auto& x : v) x /= n;
}

std::vector<float> to_float(const std::vector<double>& v) {
  return {v.begin(), v.end()};
}

}  // namespace

void validate_dataset(const FeatureDataset& ds) {
  if (ds.d == 0) fail(ErrorCode::kData, "d must be >= 1");
  if (ds.L == 0) fail(ErrorCode::kData, "L must be >= 1");
  if (ds.num_classes == 0) fail(ErrorCode::kData, "num_classes must be >= 1");
  check_class_names(ds.class_names, ds.num_classes, ErrorCode::kData);
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    if (r.label >= ds.num_classes) fail(ErrorCode::kData, record_tag(i) + ": label out of range");
    if (r.global.size() != ds.d || r.locals.size() != std::size_t{ds.L} * ds.d) {
      fail(ErrorCode::kData, record_tag(i) + ": dimensions do not match dataset");
    }
    if (!all_finite(r.global) || !all_finite(r.locals)) {
      fail(ErrorCode::kData, record_tag(i) + ": non-finite value");
    }
    const double norm = l2_norm(std::span<const float>(r.global));
    if (std::abs(norm - 1.0) > kUnitTolerance) {
      fail(ErrorCode::kData, record_tag(i) + ": global feature is not unit norm");
    }
  }
}

std::vector<std::uint8_t> encode_dataset(const FeatureDataset& ds) {
  validate_dataset(ds);
  ByteWriter w;
  w.bytes(kFeatureMagic, sizeof(kFeatureMagic));
  w.uint<std::uint32_t>(ds.d);
  w.uint<std::uint32_t>(ds.L);
  w.uint<std::uint32_t>(ds.num_classes);
  w.uint<std::uint64_t>(ds.records.size());
  for (const auto& name : ds.class_names) {
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
  }
  for (const auto& r : ds.records) {
    w.uint<std::uint32_t>(r.label);
    for (float v : r.global) w.f32(v);
    for (float v : r.locals) w.f32(v);
  }
  return w.take();
}

FeatureDataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  if (!in.has(sizeof(kFeatureMagic))) fail(ErrorCode::kFormat, "magic: file too short");
  auto magic = in.take(sizeof(kFeatureMagic));
  if (!std::equal(magic.begin(), magic.end(), std::begin(kFeatureMagic))) {
    fail(ErrorCode::kFormat, "magic: expected \"GLFv1\\0\"");
  }
  if (!in.has(4 + 4 + 4 + 8)) fail(ErrorCode::kFormat, "header: truncated dimension block");

  FeatureDataset ds;
  ds.d = in.uint<std::uint32_t>();
  ds.L = in.uint<std::uint32_t>();
  ds.num_classes = in.uint<std::uint32_t>();
  const auto num_records = in.uint<std::uint64_t>();
  if (ds.d == 0) fail(ErrorCode::kFormat, "d: must be >= 1");
  if (ds.L == 0) fail(ErrorCode::kFormat, "L: must be >= 1");
  if (ds.num_classes == 0) fail(ErrorCode::kFormat, "num_classes: must be >= 1");

  ds.class_names.reserve(std::min<std::size_t>(ds.num_classes, 1u << 16));
  for (std::uint32_t c = 0; c < ds.num_classes; ++c) {
    if (!in.has(2)) fail(ErrorCode::kFormat, "class_names: truncated at class " + std::to_string(c));
    const auto len = in.uint<std::uint16_t>();
    if (!in.has(len)) fail(ErrorCode::kFormat, "class_names: truncated at class " + std::to_string(c));
    auto raw = in.take(len);
    ds.class_names.emplace_back(raw.begin(), raw.end());
  }
  check_class_names(ds.class_names, ds.num_classes, ErrorCode::kFormat);

  const std::size_t locals_size = std::size_t{ds.L} * ds.d;
  const std::size_t record_bytes = 4 + 4 * (std::size_t{ds.d} + locals_size);
  ds.records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(num_records, in.remaining() / record_bytes)));
  for (std::uint64_t i = 0; i < num_records; ++i) {
    if (!in.has(record_bytes)) {
      fail(ErrorCode::kTruncated, record_tag(i) + ": file ends before record is complete (" +
                                      std::to_string(num_records) + " declared)");
    }
    FeatureRecord r;
    r.label = in.uint<std::uint32_t>();
    r.global.resize(ds.d);
    r.locals.resize(locals_size);
    for (auto& v : r.global) v = in.f32();
    for (auto& v : r.locals) v = in.f32();
    if (!all_finite(r.global) || !all_finite(r.locals)) {
      fail(ErrorCode::kData, record_tag(i) + ": non-finite value");
    }
    if (r.label >= ds.num_classes) fail(ErrorCode::kData, record_tag(i) + ": label out of range");
    const double norm = l2_norm(std::span<const float>(r.global));
    if (std::abs(norm - 1.0) > kRenormTolerance) {
      fail(ErrorCode::kData, record_tag(i) + ": global feature norm " + std::to_string(norm) +
                                 " too far from 1");
    }
    if (std::abs(norm - 1.0) > kUnitTolerance) {
      for (auto& v : r.global) v = static_cast<float>(v / norm);
    }
    ds.records.push_back(std::move(r));
  }
  if (in.remaining() != 0) {
    fail(ErrorCode::kFormat, "num_records: " + std::to_string(in.remaining()) +
                                 " trailing bytes after the declared records");
  }
  return ds;
}

FeatureDataset read_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) fail(ErrorCode::kIo, "read failed: " + path.string());
  return decode_dataset(bytes);
}

void write_dataset(const FeatureDataset& dataset, const std::filesystem::path& path) {
  const auto bytes = encode_dataset(dataset);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) fail(ErrorCode::kIo, "write failed: " + path.string());
}

namespace {

class SynthSampler {
 public:
  SynthSampler(const SynthSpec& spec, std::uint64_t stream) : spec_(spec) {
    std::seed_seq seq{spec.seed & 0xFFFFFFFFu, spec.seed >> 32, stream};
    rng_.seed(seq);
  }

  std::vector<double> gaussian(std::size_t n, double sigma) {
    std::vector<double> v(n);
    for (auto& x : v) x = sigma * normal_(rng_);
    return v;
  }

  FeatureRecord image(const std::vector<double>& direction, std::uint32_t label,
                      std::vector<std::uint32_t>* planted_out) {
    const std::size_t d = spec_.d;
    std::vector<std::uint32_t> rows(spec_.L);
    std::iota(rows.begin(), rows.end(), 0u);
    for (std::uint32_t i = 0; i < spec_.planted_patches_per_image; ++i) {
      std::uniform_int_distribution<std::uint32_t> pick(i, spec_.L - 1);
      std::swap(rows[i], rows[pick(rng_)]);
    }
    std::vector<std::uint32_t> planted(rows.begin(), rows.begin() + spec_.planted_patches_per_image);
    std::sort(planted.begin(), planted.end());

    FeatureRecord r;
    r.label = label;
    r.locals.resize(std::size_t{spec_.L} * d);
    std::vector<double> planted_sum(d, 0.0);
    std::size_t next = 0;
    for (std::uint32_t i = 0; i < spec_.L; ++i) {
      std::vector<double> v;
      if (next < planted.size() && planted[next] == i) {
        v = gaussian(d, spec_.noise_sigma);
        for (std::size_t k = 0; k < d; ++k) v[k] += direction[k];
        normalize_in_place(v);
        for (std::size_t k = 0; k < d; ++k) planted_sum[k] += v[k];
        ++next;
      } else {
        do {
          v = gaussian(d, 1.0);
        } while (l2_norm(std::span<const double>(v)) == 0.0);
        normalize_in_place(v);
      }
      std::copy(v.begin(), v.end(), r.locals.begin() + static_cast<std::ptrdiff_t>(i * d));
    }
    auto g = gaussian(d, spec_.noise_sigma);
    for (std::size_t k = 0; k < d; ++k) g[k] += planted_sum[k] / static_cast<double>(planted.size());
    normalize_in_place(g);
    r.global = to_float(g);
    if (planted_out) *planted_out = std::move(planted);
    return r;
  }

 private:
  const SynthSpec& spec_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

FeatureDataset empty_like(const SynthSpec& spec) {
  FeatureDataset ds;
  ds.num_classes = spec.num_classes;
  ds.d = spec.d;
  ds.L = spec.L;
  for (std::uint32_t c = 0; c < spec.num_classes; ++c) ds.class_names.push_back("class_" + std::to_string(c));
  return ds;
}

}  // namespace

SyntheticSplits generate_synthetic(const SynthSpec& spec) {
  if (spec.anchor_weight == 0.0 || spec.num_classes == 0 || spec.d == 0) return generate_synthetic(spec, {});
  if (spec.anchor_token_dim == 0 || spec.anchor_prompt_tokens == 0) {
    fail(ErrorCode::kConfig, "anchor_token_dim and anchor_prompt_tokens must be >= 1");
  }
  const auto encoder = make_toy_encoder(spec.anchor_encoder_seed, spec.anchor_token_dim, spec.d);
  const auto tokens = make_toy_class_tokens(spec.anchor_encoder_seed, spec.num_classes, spec.anchor_token_dim);
  return generate_synthetic(spec, zero_shot_anchors(*encoder, tokens, spec.anchor_prompt_tokens));
}

SyntheticSplits generate_synthetic(const SynthSpec& spec, std::span<const std::vector<double>> anchors) {
  if (spec.num_classes == 0) fail(ErrorCode::kConfig, "num_classes must be >= 1");
  if (spec.d == 0 || spec.L == 0) fail(ErrorCode::kConfig, "d and L must be >= 1");
  if (spec.d < 2 && spec.num_classes >= 2) {
    fail(ErrorCode::kConfig, "d < 2 cannot separate " + std::to_string(spec.num_classes) + " class directions");
  }
  if (spec.shots_per_class == 0) fail(ErrorCode::kConfig, "shots_per_class must be >= 1");
  if (spec.planted_patches_per_image == 0 || spec.planted_patches_per_image > spec.L) {
    fail(ErrorCode::kConfig, "planted_patches_per_image must be in [1, L]");
  }
  if (!(spec.noise_sigma >= 0.0) || !std::isfinite(spec.noise_sigma)) {
    fail(ErrorCode::kConfig, "noise_sigma must be finite and >= 0");
  }
  if (!(spec.anchor_weight >= 0.0 && spec.anchor_weight <= 1.0)) {
    fail(ErrorCode::kConfig, "anchor_weight must be in [0, 1]");
  }
  std::vector<std::vector<double>> unit_anchors;
  if (spec.anchor_weight > 0.0) {
    if (anchors.size() != spec.num_classes) {
      fail(ErrorCode::kConfig, "anchor_weight > 0 needs one anchor per class, got " + std::to_string(anchors.size()));
    }
    for (const auto& a : anchors) {
      if (a.size() != spec.d) fail(ErrorCode::kShape, "anchor length differs from d");
      auto u = a;
      if (l2_norm(std::span<const double>(u)) == 0.0) fail(ErrorCode::kConfig, "zero anchor");
      normalize_in_place(u);
      unit_anchors.push_back(std::move(u));
    }
  }

  SyntheticSplits out;
  const std::size_t d = spec.d;

  // Class directions: Gaussian draws, Gram-Schmidt orthonormalized when d allows.
  SynthSampler dir_sampler(spec, 0);
  const bool orthogonal = d >= spec.num_classes;
  for (std::uint32_t c = 0; c < spec.num_classes; ++c) {
    std::vector<double> v;
    double norm = 0.0;
    do {
      v = dir_sampler.gaussian(d, 1.0);
      if (!unit_anchors.empty()) {
        normalize_in_place(v);
        const double w = spec.anchor_weight;
        const double rest = std::sqrt(1.0 - w * w);
        for (std::size_t k = 0; k < d; ++k) v[k] = w * unit_anchors[c][k] + rest * v[k];
      }
      if (orthogonal) {
        for (const auto& u : out.class_directions) {
          const double p = dot(std::span<const double>(v), std::span<const double>(u));
          for (std::size_t k = 0; k < d; ++k) v[k] -= p * u[k];
        }
      }
      norm = l2_norm(std::span<const double>(v));
    } while (norm < 1e-6);
    normalize_in_place(v);
    out.class_directions.push_back(std::move(v));
  }

  out.train = empty_like(spec);
  SynthSampler train_sampler(spec, 1);
  for (std::uint32_t c = 0; c < spec.num_classes; ++c) {
    for (std::uint32_t s = 0; s < spec.shots_per_class; ++s) {
      std::vector<std::uint32_t> planted;
      out.train.records.push_back(train_sampler.image(out.class_directions[c], c, &planted));
      out.train_planted_rows.push_back(std::move(planted));
    }
  }

  out.test_id = empty_like(spec);
  SynthSampler id_sampler(spec, 2);
  for (std::uint32_t c = 0; c < spec.num_classes; ++c) {
    for (std::uint32_t s = 0; s < spec.test_shots_per_class; ++s) {
      out.test_id.records.push_back(id_sampler.image(out.class_directions[c], c, nullptr));
    }
  }

  // OOD images plant a fresh direction per image, projected off span{class
  // directions} whenever that leaves a nonzero complement. Labels are 0.
  out.test_ood = empty_like(spec);
  SynthSampler ood_sampler(spec, 3);
  const bool complement = d > spec.num_classes;
  for (std::uint32_t r = 0; r < spec.ood_records; ++r) {
    std::vector<double> v;
    double norm = 0.0;
    do {
      v = ood_sampler.gaussian(d, 1.0);
      if (complement) {
        for (const auto& u : out.class_directions) {
          const double p = dot(std::span<const double>(v), std::span<const double>(u));
          for (std::size_t k = 0; k < d; ++k) v[k] -= p * u[k];
        }
      }
      norm = l2_norm(std::span<const double>(v));
    } while (norm < 1e-6);
    normalize_in_place(v);
    out.test_ood.records.push_back(ood_sampler.image(v, 0, nullptr));
  }
  return out;
}

}  // namespace gallop
