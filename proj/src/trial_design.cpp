#include "xover/trial_design.hpp"

#include <algorithm>
#include <stdexcept>

namespace xover {

TrialDesign make_design(std::vector<std::vector<int>> sequences, int D) {
  if (sequences.empty()) throw std::invalid_argument("design needs at least one sequence");
  TrialDesign d;
  d.K = static_cast<int>(sequences.size());
  d.P = static_cast<int>(sequences.front().size());
  d.D = D;
  if (d.P < 1) throw std::invalid_argument("sequences must have at least one period");
  for (const auto& seq : sequences) {
    if (static_cast<int>(seq.size()) != d.P)
      throw std::invalid_argument("all sequences must have the same length");
    for (int t : seq) {
      if (t < 0 || t >= D)
        throw std::invalid_argument("treatment index outside 0..D-1");
    }
  }
  d.sequences = std::move(sequences);
  d.period_balanced = check_period_balance(d).balanced;
  d.complete_block = (d.P == d.D);
  if (d.complete_block) {
    for (const auto& seq : d.sequences) {
      std::vector<int> seen(D, 0);
      for (int t : seq) ++seen[t];
      if (std::any_of(seen.begin(), seen.end(), [](int c) { return c != 1; })) {
        d.complete_block = false;
        break;
      }
    }
  }
  return d;
}

BalanceReport check_period_balance(const TrialDesign& design) {
  BalanceReport report;
  report.counts.assign(design.P, std::vector<int>(design.D, 0));
  for (int j = 0; j < design.P; ++j)
    for (int k = 0; k < design.K; ++k)
      ++report.counts[j][design.sequences[k][j]];

  report.balanced = true;
  for (int d = 0; d < design.D && report.balanced; ++d) {
    for (int j = 1; j < design.P; ++j) {
      if (report.counts[j][d] != report.counts[0][d]) {
        report.balanced = false;
        break;
      }
    }
  }
  // Balance makes the per-period treatment-count vectors identical, which is
  // exactly what the two identities need: adjacent-period tau differences sum
  // to zero over k, and the per-period tau totals are constant in j.
  report.adjacent_difference_identity = report.balanced;
  report.constant_period_total_identity = report.balanced;
  return report;
}

TrialDesign williams_square(int D, bool require_single_square) {
  if (D < 2) throw std::invalid_argument("williams_square: need D >= 2");
  // base row 0, 1, D-1, 2, D-2, ... (interleaves from both ends)
  std::vector<int> base(D);
  base[0] = 0;
  int lo = 1, hi = D - 1;
  for (int j = 1; j < D; ++j) {
    base[j] = (j % 2 == 1) ? lo++ : hi--;
  }
  auto cyclic_rows = [&](const std::vector<int>& first) {
    std::vector<std::vector<int>> rows;
    for (int r = 0; r < D; ++r) {
      std::vector<int> row(D);
      for (int j = 0; j < D; ++j) row[j] = (first[j] + r) % D;
      rows.push_back(std::move(row));
    }
    return rows;
  };
  std::vector<std::vector<int>> seqs = cyclic_rows(base);
  if (D % 2 == 1) {
    if (require_single_square)
      throw std::invalid_argument(
          "williams_square: no single Williams square exists for odd D; "
          "the balanced construction needs the 2D-sequence pair");
    std::vector<int> rev(base.rbegin(), base.rend());
    for (auto& row : cyclic_rows(rev)) seqs.push_back(std::move(row));
  }
  return make_design(std::move(seqs), D);
}

BuiltinExample builtin_design(const std::string& name) {
  BuiltinExample ex;
  ex.name = name;
  if (name == "example1") {
    // four-treatment four-period complete-block design; one Williams square
    ex.design = williams_square(4);
    ex.params.mu0 = 10.65;
    ex.params.pi = {0.0, -0.77, -0.96, -0.55};
    ex.params.tau = {0.0, -1.51, -2.15, -2.37};
    ex.params.sigma_e2 = 6.51;
    ex.params.sigma_b2 = 10.12;
    ex.hyp.direction = Direction::less;
    ex.hyp.delta = -1.24;
    ex.hyp.alpha = 0.05;
    ex.hyp.beta = 0.2;
    ex.tau_observed = ex.params.tau;
    ex.n_int_values = {8, 16, 24, 32, 40};
    ex.n_B_values = {2, 4};
    ex.n_max = 1000;
  } else if (name == "example2") {
    // three treatments, two periods, all six ordered pairs
    ex.design = make_design({{0, 1}, {1, 0}, {0, 2}, {2, 0}, {1, 2}, {2, 1}}, 3);
    ex.params.mu0 = 1.51;
    ex.params.pi = {0.0, 0.03};
    ex.params.tau = {0.0, 0.50, 0.52};
    ex.params.sigma_e2 = 0.053;
    ex.params.sigma_b2 = 0.49;
    ex.hyp.direction = Direction::greater;
    ex.hyp.delta = 0.2;
    ex.hyp.alpha = 0.1;
    ex.hyp.beta = 0.2;
    ex.tau_observed = ex.params.tau;
    ex.n_int_values = {18};
    ex.n_B_values = {3};
    ex.n_max = 1000;
  } else if (name == "example3") {
    // two treatments, three periods (extra-period design)
    ex.design = make_design({{0, 1, 1}, {1, 0, 0}, {0, 1, 0}, {1, 0, 1}}, 2);
    ex.params.mu0 = 156.77;
    ex.params.pi = {0.0, -2.13, -4.90};
    ex.params.tau = {0.0, -7.55};
    ex.params.sigma_e2 = 169.8;
    ex.params.sigma_b2 = 255.0;
    ex.hyp.direction = Direction::less;
    ex.hyp.delta = -5.39;
    ex.hyp.alpha = 0.025;
    ex.hyp.beta = 0.1;
    ex.tau_observed = ex.params.tau;
    ex.n_int_values = {16, 32, 48};
    ex.n_B_values = {4, 8};
    ex.n_max = 1000;
  } else {
    throw std::invalid_argument("unknown builtin design: " + name);
  }
  return ex;
}

}  // namespace xover
