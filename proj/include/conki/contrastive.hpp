#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "conki/data.hpp"
#include "conki/tensor.hpp"

namespace conki {

inline constexpr int kKeysPerSample = 6;

enum class Knowledge : std::uint8_t { Pan = 0, Specific = 1 };
enum class Modality : std::uint8_t { Text = 0, Vision = 1, Audio = 2 };

/// One representation in a batch: O_m^i (pan) or A_m^i (specific) of sample i.
struct RepKey {
  int sample = 0;
  Knowledge knowledge = Knowledge::Pan;
  Modality modality = Modality::Text;

  bool operator==(const RepKey&) const = default;
};

/// Keys are laid out knowledge-major, then sample, then modality:
/// O_t^1 O_v^1 O_a^1 O_t^2 ... O_a^B A_t^1 ... A_a^B.
int key_index(const RepKey& key, int batch_size);
RepKey key_at(int index, int batch_size);
/// "O_t^1" style label with 1-based sample numbers.
std::string key_label(const RepKey& key);

enum class PairKind : std::uint8_t { P1, P2, N1, N2 };

/// Unordered pair of key indices, first < second.
struct KeyPair {
  int first = 0;
  int second = 0;

  bool operator==(const KeyPair&) const = default;
  auto operator<=>(const KeyPair&) const = default;
};

struct PairPartition {
  int batch_size = 0;
  std::vector<int> intervals;  // r(y^i) per sample
  std::vector<KeyPair> p1, p2, n1, n2;

  std::size_t total() const { return p1.size() + p2.size() + n1.size() + n2.size(); }
  const std::vector<KeyPair>& set(PairKind k) const;
};

/// Classification rule for two distinct keys given per-sample intervals.
PairKind classify_pair(const RepKey& a, const RepKey& b, std::span<const int> intervals);

/// Hierarchical pair partition over the 6|B| representations of a batch.
PairPartition build_pairs(std::span<const double> labels, LabelRange range = {});

/// exp(cos(p, q) / tau), with 1e-8 added to each norm.
double pair_similarity(std::span<const double> p, std::span<const double> q, double tau);

struct ContrastiveOptions {
  double tau = 0.07;
  // Drop N1 (pan vs specific) pairs from every denominator.
  bool include_n1 = true;
  // Knowledge types present in the batch. Pairs touching an absent type are ignored.
  bool use_pan = true;
  bool use_specific = true;
};

/// Sum over anchor samples i of -1/|P^i| * sum_{(p,q) in P^i} log(f(p,q) / sum_{AllPairs^i} f),
/// where P^i / AllPairs^i are the positive / all pairs touching at least one key of sample i.
/// `reps` is indexed by key_index; vectors of absent knowledge types may be empty.
double contrastive_loss(std::span<const Vec> reps, const PairPartition& partition,
                        const ContrastiveOptions& options);

/// Same value as contrastive_loss; `grads` receives dL/dreps (same indexing as `reps`).
double contrastive_loss_grad(std::span<const Vec> reps, const PairPartition& partition,
                             const ContrastiveOptions& options, std::vector<Vec>& grads);

/// The 6|B| x 6|B| pairing matrix: 1 = positive (P1 or P2), 0 = negative, '-' on the diagonal.
std::string pairing_matrix_text(const PairPartition& partition);

}  // namespace conki
