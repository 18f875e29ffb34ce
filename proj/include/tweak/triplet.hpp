#pragma once

#include <span>
#include <string>
#include <vector>

#include "tweak/network.hpp"

namespace tweak {

struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  bool operator==(const Triplet&) const = default;
};

double squared_distance(std::span<const double> a, std::span<const double> b);
double euclidean_distance(std::span<const double> a, std::span<const double> b);

// max(|a-p|^2 - |a-n|^2 + margin, 0)
double triplet_loss(std::span<const double> a, std::span<const double> p,
                    std::span<const double> n, double margin);

enum class MiningStrategy {
  batch_hard,  // farthest positive, nearest negative per anchor
  batch_all,   // every valid triplet with positive loss
};
MiningStrategy parse_mining_strategy(const std::string& s);
std::string to_string(MiningStrategy m);

struct MiningResult {
  std::vector<Triplet> triplets;  // only those with positive loss
  std::vector<double> losses;
  std::size_t anchors_considered = 0;
  std::string diagnostic;  // set when the batch cannot yield triplets
};

// `embeddings` is [batch][dim] row-major.
MiningResult mine_triplets(std::span<const double> embeddings, std::size_t dim,
                           std::span<const DeviceId> labels, double margin,
                           MiningStrategy strategy = MiningStrategy::batch_hard);

MiningResult mine_triplets(std::span<const EmbeddingPoint> embeddings,
                           std::span<const DeviceId> labels, double margin,
                           MiningStrategy strategy = MiningStrategy::batch_hard);

struct TripletObjective {
  double loss = 0.0;  // mean over mined triplets, 0 if none survive
  std::size_t active = 0;
  std::vector<double> grad;  // d loss / d embeddings, [batch][dim]
};

TripletObjective mined_triplet_objective(std::span<const double> embeddings, std::size_t dim,
                                         std::span<const DeviceId> labels, double margin,
                                         MiningStrategy strategy);

// Mean hinge over every valid (anchor, positive, negative) triplet, zeros included.
// Returns the sum and count so callers can pool batches.
struct TripletSum {
  double sum = 0.0;
  std::size_t count = 0;
};
TripletSum all_triplet_loss(std::span<const double> embeddings, std::size_t dim,
                            std::span<const DeviceId> labels, double margin);

}  // namespace tweak
