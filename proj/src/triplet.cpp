#include "tweak/triplet.hpp"

#include <cmath>
#include <limits>

namespace tweak {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("embedding dimensions differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_distance(a, b));
}

double triplet_loss(std::span<const double> a, std::span<const double> p,
                    std::span<const double> n, double margin) {
  return std::max(squared_distance(a, p) - squared_distance(a, n) + margin, 0.0);
}

MiningStrategy parse_mining_strategy(const std::string& s) {
  if (s == "batch_hard" || s == "batch-hard" || s == "hard") return MiningStrategy::batch_hard;
  if (s == "batch_all" || s == "batch-all" || s == "all") return MiningStrategy::batch_all;
  throw Error("unknown mining strategy '" + s + "'");
}

std::string to_string(MiningStrategy m) {
  return m == MiningStrategy::batch_hard ? "batch_hard" : "batch_all";
}

namespace {

std::vector<double> pairwise_sq(std::span<const double> e, std::size_t B, std::size_t D) {
  std::vector<double> d(B * B, 0.0);
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = i + 1; j < B; ++j) {
      const double v = squared_distance(e.subspan(i * D, D), e.subspan(j * D, D));
      d[i * B + j] = v;
      d[j * B + i] = v;
    }
  return d;
}

void check_batch(std::span<const double> e, std::size_t dim, std::span<const DeviceId> labels) {
  if (dim == 0) throw Error("embedding dimension must be positive");
  if (e.size() != labels.size() * dim)
    throw Error("embedding batch size does not match label count");
}

}  // namespace

MiningResult mine_triplets(std::span<const double> e, std::size_t D,
                           std::span<const DeviceId> labels, double margin,
                           MiningStrategy strategy) {
  check_batch(e, D, labels);
  const std::size_t B = labels.size();
  MiningResult r;
  bool two_labels = false;
  for (std::size_t i = 1; i < B && !two_labels; ++i) two_labels = labels[i] != labels[0];
  if (!two_labels) {
    r.diagnostic = "batch holds a single label; no negatives available";
    return r;
  }
  const auto dist = pairwise_sq(e, B, D);

  for (std::size_t a = 0; a < B; ++a) {
    bool has_pos = false;
    for (std::size_t j = 0; j < B && !has_pos; ++j) has_pos = j != a && labels[j] == labels[a];
    if (!has_pos) continue;
    ++r.anchors_considered;

    if (strategy == MiningStrategy::batch_hard) {
      std::size_t p = B, n = B;
      for (std::size_t j = 0; j < B; ++j) {
        if (j == a) continue;
        if (labels[j] == labels[a]) {
          if (p == B || dist[a * B + j] > dist[a * B + p]) p = j;
        } else if (n == B || dist[a * B + j] < dist[a * B + n]) {
          n = j;
        }
      }
      const double l = std::max(dist[a * B + p] - dist[a * B + n] + margin, 0.0);
      if (l > 0.0) {
        r.triplets.push_back({a, p, n});
        r.losses.push_back(l);
      }
    } else {
      for (std::size_t p = 0; p < B; ++p) {
        if (p == a || labels[p] != labels[a]) continue;
        for (std::size_t n = 0; n < B; ++n) {
          if (labels[n] == labels[a]) continue;
          const double l = dist[a * B + p] - dist[a * B + n] + margin;
          if (l > 0.0) {
            r.triplets.push_back({a, p, n});
            r.losses.push_back(l);
          }
        }
      }
    }
  }
  if (r.anchors_considered == 0) r.diagnostic = "no anchor has a positive in this batch";
  return r;
}

MiningResult mine_triplets(std::span<const EmbeddingPoint> embeddings,
                           std::span<const DeviceId> labels, double margin,
                           MiningStrategy strategy) {
  if (embeddings.size() != labels.size()) throw Error("embedding and label counts differ");
  if (embeddings.empty()) return {};
  const std::size_t D = embeddings.front().size();
  std::vector<double> flat;
  flat.reserve(embeddings.size() * D);
  for (const auto& p : embeddings) {
    if (p.size() != D) throw Error("embedding dimensions differ within a batch");
    flat.insert(flat.end(), p.begin(), p.end());
  }
  return mine_triplets(flat, D, labels, margin, strategy);
}

TripletObjective mined_triplet_objective(std::span<const double> e, std::size_t D,
                                         std::span<const DeviceId> labels, double margin,
                                         MiningStrategy strategy) {
  const auto mined = mine_triplets(e, D, labels, margin, strategy);
  TripletObjective obj;
  obj.grad.assign(e.size(), 0.0);
  obj.active = mined.triplets.size();
  if (obj.active == 0) return obj;
  const double scale = 1.0 / static_cast<double>(obj.active);
  double sum = 0.0;
  for (std::size_t t = 0; t < mined.triplets.size(); ++t) {
    sum += mined.losses[t];
    const auto [a, p, n] = mined.triplets[t];
    for (std::size_t k = 0; k < D; ++k) {
      const double va = e[a * D + k], vp = e[p * D + k], vn = e[n * D + k];
      obj.grad[a * D + k] += scale * 2.0 * (vn - vp);
      obj.grad[p * D + k] += scale * -2.0 * (va - vp);
      obj.grad[n * D + k] += scale * 2.0 * (va - vn);
    }
  }
  obj.loss = sum * scale;
  return obj;
}

TripletSum all_triplet_loss(std::span<const double> e, std::size_t D,
                            std::span<const DeviceId> labels, double margin) {
  check_batch(e, D, labels);
  const std::size_t B = labels.size();
  const auto dist = pairwise_sq(e, B, D);
  TripletSum s;
  for (std::size_t a = 0; a < B; ++a)
    for (std::size_t p = 0; p < B; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      for (std::size_t n = 0; n < B; ++n) {
        if (labels[n] == labels[a]) continue;
        s.sum += std::max(dist[a * B + p] - dist[a * B + n] + margin, 0.0);
        ++s.count;
      }
    }
  return s;
}

}  // namespace tweak
