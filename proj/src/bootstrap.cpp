#include "fsgl/bootstrap.hpp"

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <utility>

#include "fsgl/errors.hpp"

namespace fsgl {

namespace {

FunctionalDataset take_rows(const FunctionalDataset& data, const std::vector<int>& idx) {
  FunctionalDataset out;
  out.n_classes = data.n_classes;
  out.reference_class = data.reference_class;
  out.class_names = data.class_names;
  out.labels.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out.labels[i] = data.labels[size_t(idx[i])];
  out.groups.reserve(data.groups.size());
  for (const auto& g : data.groups) {
    GroupData sub;
    sub.name = g.name;
    sub.functional = g.functional;
    sub.basis = g.basis;
    sub.values.resize(Eigen::Index(idx.size()), g.values.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) sub.values.row(Eigen::Index(i)) = g.values.row(idx[i]);
    out.groups.push_back(std::move(sub));
  }
  return out;
}

// One replicate's resample indices.  Every replicate owns an independent
// generator seeded from (master seed, replicate number), so the draw depends
// on nothing but those two values; rows are drawn as rng() % n (the modulo
// bias at n << 2^64 is far below anything observable).  Redraw until every
// class appears.
std::vector<int> draw_resample(const FunctionalDataset& data, std::uint64_t seed, int replicate,
                               int max_attempts) {
  const int n = data.n();
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(replicate)};
  std::mt19937_64 rng(seq);
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    std::vector<bool> seen(size_t(data.n_classes), false);
    for (int i = 0; i < n; ++i) {
      idx[size_t(i)] = int(rng() % std::uint64_t(n));
      seen[size_t(data.labels[size_t(idx[size_t(i)])] - 1)] = true;
    }
    if (std::all_of(seen.begin(), seen.end(), [](bool b) { return b; })) return idx;
  }
  throw input_error("bootstrap: no resample contained every class after " +
                    std::to_string(max_attempts) + " attempts; a class is too rare to bootstrap");
}

struct TaskOutcome {
  bool failed = false;
  std::vector<char> group_active;              // per group
  std::vector<std::vector<char>> sub_active;   // group x (L-1), rotated-class order
};

}  // namespace

FunctionalDataset rotate_reference(const FunctionalDataset& data, int reference) {
  if (reference < 1 || reference > data.n_classes)
    throw input_error("rotate_reference: reference class out of range");
  FunctionalDataset out = data;
  out.reference_class = reference;
  return out;
}

int SelectionReport::pair_index(int a, int b) const {
  if (a > b) std::swap(a, b);
  for (int k = 0; k < int(pairs.size()); ++k)
    if (pairs[size_t(k)] == std::make_pair(a, b)) return k;
  throw input_error("selection report: no such class pair");
}

Eigen::MatrixXd SelectionReport::boundary_frequency() const {
  Eigen::MatrixXd freq = Eigen::MatrixXd::Constant(boundary_counts.rows(), boundary_counts.cols(),
                                                   std::numeric_limits<double>::quiet_NaN());
  for (Eigen::Index r = 0; r < freq.rows(); ++r)
    for (Eigen::Index c = 0; c < freq.cols(); ++c)
      if (boundary_attempts(r, c) > 0)
        freq(r, c) = double(boundary_counts(r, c)) / double(boundary_attempts(r, c));
  return freq;
}

Eigen::VectorXd SelectionReport::variable_frequency() const {
  Eigen::VectorXd freq = Eigen::VectorXd::Constant(variable_counts.size(),
                                                   std::numeric_limits<double>::quiet_NaN());
  if (variable_attempts > 0)
    for (Eigen::Index g = 0; g < freq.size(); ++g)
      freq[g] = double(variable_counts[g]) / double(variable_attempts);
  return freq;
}

SelectionReport bootstrap_run(const FunctionalDataset& data, const TuningGrid& grid,
                              const BootstrapOptions& options, const FitControls& controls) {
  data.validate();
  if (options.n_replicates < 1) throw input_error("bootstrap: need at least one replicate");
  if (options.jobs < 1) throw input_error("bootstrap: jobs must be positive");
  if (options.max_attempts < 1) throw input_error("bootstrap: max_attempts must be positive");

  const int L = data.n_classes;
  std::vector<int> rotations = options.rotations;
  if (rotations.empty()) {
    rotations.resize(size_t(L));
    for (int r = 1; r <= L; ++r) rotations[size_t(r - 1)] = r;
  }
  for (int r : rotations)
    if (r < 1 || r > L) throw input_error("bootstrap: rotation reference out of range");
  if (std::set<int>(rotations.begin(), rotations.end()).size() != rotations.size())
    throw input_error("bootstrap: duplicate rotation reference");

  const int B = options.n_replicates;
  const int R = int(rotations.size());
  const int p = int(data.groups.size());

  // All resamples are drawn up front, serially; the parallel phase below
  // only ever reads them.
  std::vector<std::vector<int>> resamples(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b)
    resamples[size_t(b)] = draw_resample(data, options.seed, b, options.max_attempts);

  std::vector<TaskOutcome> outcomes(size_t(B) * size_t(R));
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error = nullptr;
  std::mutex error_lock;

  const auto worker = [&]() {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= outcomes.size()) return;
      try {
        const int b = int(t) / R;
        const int rot = rotations[size_t(int(t) % R)];
        FunctionalDataset sample = take_rows(data, resamples[size_t(b)]);
        sample.reference_class = rot;
        const DesignMatrix design = build_design(sample);
        const Eigen::MatrixXd y = encode_labels(sample.labels, L, rot);
        const GridSearchResult res = grid_search(design, y, grid, controls);

        TaskOutcome& out = outcomes[t];
        if (res.best < 0) {
          out.failed = true;
          continue;
        }
        const SolverReport& rep = res.best_fit().report;
        out.group_active.assign(size_t(p), 0);
        out.sub_active.assign(size_t(p), std::vector<char>(size_t(L - 1), 0));
        for (int g = 0; g < p; ++g) {
          out.group_active[size_t(g)] = rep.active_groups[size_t(g)] ? 1 : 0;
          for (int l = 0; l < L - 1; ++l)
            out.sub_active[size_t(g)][size_t(l)] = rep.active_subblocks[size_t(g)][size_t(l)] ? 1 : 0;
        }
      } catch (...) {
        std::lock_guard<std::mutex> hold(error_lock);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };

  const int n_threads = std::min<int>(options.jobs, int(outcomes.size()));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(size_t(n_threads));
    for (int w = 0; w < n_threads; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  SelectionReport report;
  report.n_classes = L;
  report.n_replicates = B;
  report.rotations = rotations;
  for (const auto& g : data.groups) report.group_names.push_back(g.name);
  for (int a = 1; a <= L; ++a)
    for (int b = a + 1; b <= L; ++b) report.pairs.emplace_back(a, b);
  report.boundary_counts = Eigen::MatrixXi::Zero(Eigen::Index(report.pairs.size()), p);
  report.boundary_attempts = Eigen::MatrixXi::Zero(Eigen::Index(report.pairs.size()), p);
  report.variable_counts = Eigen::VectorXi::Zero(p);

  for (std::size_t t = 0; t < outcomes.size(); ++t) {
    const TaskOutcome& out = outcomes[t];
    if (out.failed) {
      ++report.n_failed_fits;
      continue;
    }
    const int rot = rotations[t % size_t(R)];
    ++report.variable_attempts;
    for (int g = 0; g < p; ++g) {
      if (out.group_active[size_t(g)]) ++report.variable_counts[g];
      // Sub-block l of this fit separates the original class c with
      // rotated_label(c) = l+1 from the reference; that is boundary {c, rot}.
      for (int c = 1; c <= L; ++c) {
        if (c == rot) continue;
        const int l = rotated_label(c, L, rot) - 1;
        const int row = report.pair_index(c, rot);
        ++report.boundary_attempts(row, g);
        if (out.sub_active[size_t(g)][size_t(l)]) ++report.boundary_counts(row, g);
      }
    }
  }
  return report;
}

}  // namespace fsgl
