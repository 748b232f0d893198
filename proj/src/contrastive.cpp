#include "conki/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "conki/errors.hpp"

namespace conki {

namespace {

constexpr double kNormEps = 1e-8;
constexpr const char* kModalityTag[3] = {"t", "v", "a"};

bool knowledge_present(Knowledge k, const ContrastiveOptions& o) {
  return k == Knowledge::Pan ? o.use_pan : o.use_specific;
}

}  // namespace

int key_index(const RepKey& key, int batch_size) {
  return static_cast<int>(key.knowledge) * 3 * batch_size + key.sample * 3 +
         static_cast<int>(key.modality);
}

RepKey key_at(int index, int batch_size) {
  const int per_knowledge = 3 * batch_size;
  RepKey k;
  k.knowledge = static_cast<Knowledge>(index / per_knowledge);
  k.sample = (index % per_knowledge) / 3;
  k.modality = static_cast<Modality>(index % 3);
  return k;
}

std::string key_label(const RepKey& key) {
  return std::string(key.knowledge == Knowledge::Pan ? "O_" : "A_") +
         kModalityTag[static_cast<int>(key.modality)] + "^" + std::to_string(key.sample + 1);
}

const std::vector<KeyPair>& PairPartition::set(PairKind k) const {
  switch (k) {
    case PairKind::P1: return p1;
    case PairKind::P2: return p2;
    case PairKind::N1: return n1;
    case PairKind::N2: return n2;
  }
  return p1;
}

PairKind classify_pair(const RepKey& a, const RepKey& b, std::span<const int> intervals) {
  if (a.knowledge != b.knowledge) return PairKind::N1;
  if (a.sample == b.sample) return PairKind::P1;
  return intervals[static_cast<std::size_t>(a.sample)] == intervals[static_cast<std::size_t>(b.sample)]
             ? PairKind::P2
             : PairKind::N2;
}

PairPartition build_pairs(std::span<const double> labels, LabelRange range) {
  if (labels.empty()) throw InvalidInputError("build_pairs: empty batch");
  PairPartition part;
  part.batch_size = static_cast<int>(labels.size());
  for (double y : labels) part.intervals.push_back(round_to_interval(y, range).value());

  const int n = kKeysPerSample * part.batch_size;
  for (int a = 0; a < n; ++a) {
    const RepKey ka = key_at(a, part.batch_size);
    for (int b = a + 1; b < n; ++b) {
      const RepKey kb = key_at(b, part.batch_size);
      switch (classify_pair(ka, kb, part.intervals)) {
        case PairKind::P1: part.p1.push_back({a, b}); break;
        case PairKind::P2: part.p2.push_back({a, b}); break;
        case PairKind::N1: part.n1.push_back({a, b}); break;
        case PairKind::N2: part.n2.push_back({a, b}); break;
      }
    }
  }
  return part;
}

double pair_similarity(std::span<const double> p, std::span<const double> q, double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be > 0");
  if (p.size() != q.size()) throw ShapeError("pair_similarity: dimension mismatch");
  double dot = 0.0, np = 0.0, nq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!std::isfinite(p[i]) || !std::isfinite(q[i])) {
      throw InvalidInputError("pair_similarity: non-finite input");
    }
    dot += p[i] * q[i];
    np += p[i] * p[i];
    nq += q[i] * q[i];
  }
  const double cosine = dot / ((std::sqrt(np) + kNormEps) * (std::sqrt(nq) + kNormEps));
  return std::exp(cosine / tau);
}

namespace {

struct ActivePair {
  int a, b;
  int sa, sb;
  bool positive;
  double logit;  // cos / tau
};

// Shared forward for value and gradient. Fills per-anchor statistics.
struct LossState {
  std::vector<Vec> unit;
  std::vector<double> norm;
  std::vector<ActivePair> pairs;
  std::vector<double> max_logit, denom, pos_sum;
  std::vector<int> pos_count;
  double loss = 0.0;
};

LossState evaluate(std::span<const Vec> reps, const PairPartition& part, const ContrastiveOptions& o) {
  if (!(o.tau > 0.0)) throw ConfigError("temperature must be > 0");
  const int batch = part.batch_size;
  const int n = kKeysPerSample * batch;
  if (static_cast<int>(reps.size()) != n) {
    throw ShapeError("contrastive_loss: expected " + std::to_string(n) + " representations, got " +
                     std::to_string(reps.size()));
  }
  LossState st;
  st.unit.resize(static_cast<std::size_t>(n));
  st.norm.assign(static_cast<std::size_t>(n), 0.0);
  Eigen::Index dim = -1;
  for (int k = 0; k < n; ++k) {
    if (!knowledge_present(key_at(k, batch).knowledge, o)) continue;
    const Vec& x = reps[static_cast<std::size_t>(k)];
    if (dim < 0) dim = x.size();
    if (x.size() != dim || dim == 0) throw ShapeError("contrastive_loss: inconsistent representation dims");
    if (!x.allFinite()) throw InvalidInputError("contrastive_loss: non-finite representation");
    st.norm[static_cast<std::size_t>(k)] = x.norm();
    st.unit[static_cast<std::size_t>(k)] = x / (st.norm[static_cast<std::size_t>(k)] + kNormEps);
  }

  auto add = [&](const std::vector<KeyPair>& set, bool positive) {
    for (const auto& p : set) {
      const RepKey ka = key_at(p.first, batch), kb = key_at(p.second, batch);
      if (!knowledge_present(ka.knowledge, o) || !knowledge_present(kb.knowledge, o)) continue;
      const double cosine = st.unit[static_cast<std::size_t>(p.first)].dot(st.unit[static_cast<std::size_t>(p.second)]);
      st.pairs.push_back({p.first, p.second, ka.sample, kb.sample, positive, cosine / o.tau});
    }
  };
  add(part.p1, true);
  add(part.p2, true);
  if (o.include_n1) add(part.n1, false);
  add(part.n2, false);

  const auto nb = static_cast<std::size_t>(batch);
  st.max_logit.assign(nb, -std::numeric_limits<double>::infinity());
  st.denom.assign(nb, 0.0);
  st.pos_sum.assign(nb, 0.0);
  st.pos_count.assign(nb, 0);
  for (const auto& p : st.pairs) {
    for (int s : {p.sa, p.sb}) {
      auto& m = st.max_logit[static_cast<std::size_t>(s)];
      m = std::max(m, p.logit);
      if (p.sb == p.sa) break;
    }
  }
  for (const auto& p : st.pairs) {
    for (int s : {p.sa, p.sb}) {
      const auto i = static_cast<std::size_t>(s);
      st.denom[i] += std::exp(p.logit - st.max_logit[i]);
      if (p.positive) {
        st.pos_sum[i] += p.logit;
        ++st.pos_count[i];
      }
      if (p.sb == p.sa) break;
    }
  }
  for (std::size_t i = 0; i < nb; ++i) {
    if (st.pos_count[i] == 0) continue;
    st.loss += -st.pos_sum[i] / st.pos_count[i] + st.max_logit[i] + std::log(st.denom[i]);
  }
  return st;
}

}  // namespace

double contrastive_loss(std::span<const Vec> reps, const PairPartition& partition,
                        const ContrastiveOptions& options) {
  return evaluate(reps, partition, options).loss;
}

double contrastive_loss_grad(std::span<const Vec> reps, const PairPartition& partition,
                             const ContrastiveOptions& options, std::vector<Vec>& grads) {
  LossState st = evaluate(reps, partition, options);
  const std::size_t n = reps.size();
  std::vector<Vec> d_unit(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (st.unit[k].size() != 0) d_unit[k] = Vec::Zero(st.unit[k].size());
  }
  for (const auto& p : st.pairs) {
    double d_logit = 0.0;
    for (int s : {p.sa, p.sb}) {
      const auto i = static_cast<std::size_t>(s);
      if (st.pos_count[i] > 0) {
        d_logit += std::exp(p.logit - st.max_logit[i]) / st.denom[i];
        if (p.positive) d_logit -= 1.0 / st.pos_count[i];
      }
      if (p.sb == p.sa) break;
    }
    const double d_cos = d_logit / options.tau;
    const auto a = static_cast<std::size_t>(p.a), b = static_cast<std::size_t>(p.b);
    d_unit[a] += d_cos * st.unit[b];
    d_unit[b] += d_cos * st.unit[a];
  }
  grads.assign(n, Vec());
  for (std::size_t k = 0; k < n; ++k) {
    if (st.unit[k].size() == 0) continue;
    // u = x / (|x| + eps)  =>  du/dx = I/(|x|+eps) - x x^T / (|x| (|x|+eps)^2)
    const double nrm = st.norm[k];
    const double denom = nrm + kNormEps;
    const Vec& x = reps[k];
    Vec g = d_unit[k] / denom;
    if (nrm > 0.0) g -= x * (x.dot(d_unit[k]) / (nrm * denom * denom));
    grads[k] = std::move(g);
  }
  return st.loss;
}

std::string pairing_matrix_text(const PairPartition& part) {
  const int n = kKeysPerSample * part.batch_size;
  std::vector<std::string> labels;
  std::size_t width = 0;
  for (int k = 0; k < n; ++k) {
    labels.push_back(key_label(key_at(k, part.batch_size)));
    width = std::max(width, labels.back().size());
  }
  std::vector<char> cell(static_cast<std::size_t>(n) * n, '0');
  for (int k = 0; k < n; ++k) cell[static_cast<std::size_t>(k) * n + k] = '-';
  for (const auto* set : {&part.p1, &part.p2}) {
    for (const auto& p : *set) {
      cell[static_cast<std::size_t>(p.first) * n + p.second] = '1';
      cell[static_cast<std::size_t>(p.second) * n + p.first] = '1';
    }
  }
  std::ostringstream os;
  auto pad = [&](const std::string& s) { os << std::string(width + 1 - s.size(), ' ') << s; };
  pad("");
  for (const auto& l : labels) pad(l);
  os << '\n';
  for (int r = 0; r < n; ++r) {
    pad(labels[static_cast<std::size_t>(r)]);
    for (int c = 0; c < n; ++c) pad(std::string(1, cell[static_cast<std::size_t>(r) * n + c]));
    os << '\n';
  }
  return os.str();
}

}  // namespace conki
