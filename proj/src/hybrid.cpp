#include "rfd/hybrid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "rfd/io/files.hpp"
#include "rfd/io/model_file.hpp"

namespace rfd::hybrid {

DistanceProfile distance_profile(const Network& net, const Tensor& clean, const Tensor& adversarial,
                                 std::string source, std::size_t chunk) {
  if (clean.shape() != adversarial.shape()) {
    throw std::invalid_argument("clean and adversarial batches differ in shape: " + to_string(clean.shape()) +
                                " vs " + to_string(adversarial.shape()));
  }
  if (chunk == 0) throw std::invalid_argument("chunk must be positive");
  const std::size_t m = clean.dim(0), layers = net.num_activations();
  std::vector<std::vector<double>> terms(layers);
  DistanceProfile p;
  p.excluded_pairs.assign(layers, 0);
  p.sample_count = m;
  p.source = std::move(source);

  for (std::size_t begin = 0; begin < m; begin += chunk) {
    const std::size_t end = std::min(m, begin + chunk);
    const auto a = net.activations(clean.slice_rows(begin, end));
    const auto b = net.activations(adversarial.slice_rows(begin, end));
    for (std::size_t k = 0; k < layers; ++k) {
      const std::size_t d = a[k].dim(1);
      for (std::size_t r = 0; r < end - begin; ++r) {
        const auto ar = a[k].data().subspan(r * d, d);
        const auto br = b[k].data().subspan(r * d, d);
        const double norm = l2_norm(ar);
        if (norm == 0.0) {
          ++p.excluded_pairs[k];
          continue;
        }
        terms[k].push_back(std::sqrt(squared_l2_distance(ar, br)) / norm);
      }
    }
  }
  p.d.assign(layers, 0.0);
  for (std::size_t k = 0; k < layers; ++k) {
    auto& t = terms[k];
    if (t.empty()) continue;
    std::sort(t.begin(), t.end());
    double s = 0.0;
    for (double v : t) s += v;
    p.d[k] = s / static_cast<double>(t.size());
  }
  return p;
}

TapChoice select_tap(const std::vector<double>& profile, TapRule rule) {
  if (profile.size() < 2) throw std::invalid_argument("tap selection needs at least two activations");
  double scale = 0.0;
  for (double v : profile) {
    if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("profile values must be finite and >= 0");
    scale = std::max(scale, v);
  }
  const double tol = 1e-12 * scale;
  auto score = [&](std::size_t j) {  // j is 1-based, >= 2
    return rule == TapRule::LargestGrowth ? profile[j - 1] - profile[j - 2] : profile[j - 1];
  };
  std::size_t best = 2;
  for (std::size_t j = 3; j <= profile.size(); ++j) {
    if (score(j) > score(best) + tol) best = j;
  }
  return {best, best - 1};
}

void write_profile_csv(std::ostream& out, const DistanceProfile& profile) {
  out << "activation_index,D_k,excluded_pairs\n";
  char buf[64];
  for (std::size_t k = 0; k < profile.d.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%.17g", profile.d[k]);
    out << (k + 1) << ',' << buf << ',' << (k < profile.excluded_pairs.size() ? profile.excluded_pairs[k] : 0)
        << '\n';
  }
}

DistanceProfile read_profile_csv(std::istream& in) {
  DistanceProfile p;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    if (!header) {
      if (line.rfind("activation_index,D_k", 0) != 0)
        throw io::FormatError("line " + std::to_string(line_no) + ": expected activation_index,D_k header");
      header = true;
      continue;
    }
    std::stringstream ss(line);
    std::string idx, dk, excl;
    std::getline(ss, idx, ',');
    std::getline(ss, dk, ',');
    std::getline(ss, excl, ',');
    try {
      std::size_t used = 0;
      const auto k = std::stoul(idx, &used);
      if (used != idx.size() || k != p.d.size() + 1)
        throw io::FormatError("line " + std::to_string(line_no) + ": activation indices must run 1, 2, ...");
      p.d.push_back(std::stod(dk));
      p.excluded_pairs.push_back(excl.empty() ? 0 : std::stoul(excl));
    } catch (const std::logic_error&) {
      throw io::FormatError("line " + std::to_string(line_no) + ": cannot parse '" + line + "'");
    }
  }
  if (!header) throw io::FormatError("profile CSV has no header");
  return p;
}

HybridModel::HybridModel(const Network& net, std::size_t tap, forest::Forest forest)
    : prefix_(net.prefix(tap)), tap_(tap), forest_(std::move(forest)) {
  const std::size_t d = numel(prefix_.activation_shape(tap_));
  if (forest_.feature_dim() != d) {
    throw std::invalid_argument("forest takes " + std::to_string(forest_.feature_dim()) +
                                " features but activation " + std::to_string(tap_) + " has " + std::to_string(d));
  }
}

HybridModel::Classification HybridModel::classify(const Tensor& x) const {
  if (x.shape() != prefix_.input_shape()) {
    throw std::invalid_argument("hybrid input must be " + to_string(prefix_.input_shape()) + ", got " +
                                to_string(x.shape()));
  }
  Shape batched{1};
  batched.insert(batched.end(), x.shape().begin(), x.shape().end());
  const Tensor features = prefix_.tap(tap_, x.reshaped(batched));
  Classification c;
  c.proba = forest_.predict_proba(features.data());
  c.label = static_cast<int>(argmax(c.proba));
  return c;
}

Tensor HybridModel::classify_proba(const Tensor& batch) const {
  return forest_.predict_proba(prefix_.tap(tap_, batch));
}

std::vector<int> HybridModel::classify_labels(const Tensor& batch, std::size_t chunk) const {
  const std::size_t n = batch.dim(0);
  std::vector<int> out;
  out.reserve(n);
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    const Tensor p = classify_proba(batch.slice_rows(begin, end));
    const std::size_t j = p.dim(1);
    for (std::size_t r = 0; r < end - begin; ++r) out.push_back(static_cast<int>(argmax(p.data().subspan(r * j, j))));
  }
  return out;
}

std::string HybridModel::serialize(nlohmann::json meta) const {
  meta["kind"] = "hybrid";
  meta["tap"] = tap_;
  meta["activations"] = io::activation_map(prefix_);
  io::ByteWriter f, h;
  forest_.encode(f);
  h.u64(tap_);
  return io::encode_container({{io::kTagMeta, meta.dump(2)},
                               {io::kTagNetwork, io::encode_network_layers(prefix_)},
                               {io::kTagActivations, io::encode_activation_index(prefix_)},
                               {io::kTagForest, f.take()},
                               {io::kTagHybrid, h.take()}});
}

HybridModel HybridModel::deserialize(std::string_view bytes, nlohmann::json* meta) {
  const auto sections = io::decode_container(bytes);
  Network prefix = io::decode_network(io::require_section(sections, io::kTagNetwork).payload,
                                      io::require_section(sections, io::kTagActivations).payload);
  io::ByteReader fr(io::require_section(sections, io::kTagForest).payload);
  auto forest = forest::Forest::decode(fr);
  if (!fr.done()) throw io::FormatError("trailing bytes in FRST at byte " + std::to_string(fr.offset()));
  io::ByteReader hr(io::require_section(sections, io::kTagHybrid).payload);
  const auto tap = hr.u64();
  if (tap == 0 || tap != prefix.num_activations())
    throw io::FormatError("HYBR tap " + std::to_string(tap) + " does not match the stored prefix");
  if (meta) {
    const auto* m = io::find_section(sections, io::kTagMeta);
    try {
      *meta = m ? nlohmann::json::parse(m->payload) : nlohmann::json::object();
    } catch (const nlohmann::json::exception& e) {
      throw io::FormatError(std::string("META is not valid JSON: ") + e.what());
    }
  }
  try {
    return HybridModel(prefix, tap, std::move(forest));
  } catch (const std::invalid_argument& e) {
    throw io::FormatError(e.what());
  }
}

void HybridModel::save(const std::filesystem::path& path, nlohmann::json meta) const {
  io::write_file_atomic(path, serialize(std::move(meta)));
}

HybridModel HybridModel::load(const std::filesystem::path& path, nlohmann::json* meta) {
  try {
    return deserialize(io::read_file(path), meta);
  } catch (const io::FormatError& e) {
    throw io::FormatError(path.string() + ": " + e.what());
  }
}

Tensor tap_features(const Network& net, std::size_t tap, const Tensor& images, std::size_t chunk) {
  const Network prefix = net.prefix(tap);
  const std::size_t n = images.dim(0), d = numel(prefix.activation_shape(tap));
  Tensor features({n, d});
  for (std::size_t begin = 0; begin < n; begin += chunk) {
    const std::size_t end = std::min(n, begin + chunk);
    const Tensor t = prefix.tap(tap, images.slice_rows(begin, end));
    std::copy(t.data().begin(), t.data().end(), features.data().begin() + static_cast<std::ptrdiff_t>(begin * d));
  }
  return features;
}

HybridModel build_hybrid(const Network& net, std::size_t tap, const Tensor& features, std::span<const int> labels,
                         const forest::GrowthParams& params, std::size_t num_classes) {
  auto forest = forest::grow_forest(features, labels, num_classes, params);
  return HybridModel(net, tap, std::move(forest));
}

HybridModel build_hybrid(const Network& net, std::size_t tap, const Dataset& train_set,
                         const forest::GrowthParams& params, std::size_t num_classes, std::size_t chunk) {
  return build_hybrid(net, tap, tap_features(net, tap, train_set.images, chunk), train_set.labels, params,
                      num_classes);
}

double accuracy(const HybridModel& model, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("accuracy of an empty dataset");
  const auto pred = model.classify_labels(data.images);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace rfd::hybrid
