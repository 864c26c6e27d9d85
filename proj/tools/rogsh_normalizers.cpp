// Searches SO(3) for the maximum of |(2l+1) T| of each retained ROGSH basis
// function: a dense Euler grid, then gradient refinement from the best cells.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <vector>

#include <CLI11.hpp>
#include <ceres/ceres.h>

#include "microsynth/rogsh.hpp"

using namespace microsynth;

namespace {

double scaled(int channel, const double* angles) {
  const auto v = rogsh::eval_basis({angles[0], angles[1], angles[2]});
  return (2 * rogsh::kDegrees[channel] + 1) * v[channel];
}

// Minimizes -value^2 with central-difference gradients.
class NegSquare final : public ceres::FirstOrderFunction {
 public:
  explicit NegSquare(int channel) : channel_(channel) {}
  int NumParameters() const override { return 3; }
  bool Evaluate(const double* x, double* cost, double* grad) const override {
    const double v = scaled(channel_, x);
    cost[0] = -v * v;
    if (grad) {
      for (int k = 0; k < 3; ++k) {
        double p[3] = {x[0], x[1], x[2]}, m[3] = {x[0], x[1], x[2]};
        const double h = 1e-6;
        p[k] += h;
        m[k] -= h;
        const double vp = scaled(channel_, p), vm = scaled(channel_, m);
        grad[k] = -(vp * vp - vm * vm) / (2 * h);
      }
    }
    return true;
  }

 private:
  int channel_;
};

struct Cell {
  double value;
  double angles[3];
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reproduce the ROGSH normalization constants"};
  int grid = 120;
  int starts = 16;
  app.add_option("--grid", grid, "Grid points per Euler angle")->check(CLI::Range(4, 1000))->capture_default_str();
  app.add_option("--starts", starts, "Best grid cells refined per channel")->check(CLI::PositiveNumber)->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  for (int c = 0; c < 3; ++c) {
    std::vector<Cell> cells;
    cells.reserve(static_cast<std::size_t>(grid) * grid * grid);
    for (int i = 0; i < grid; ++i) {
      for (int j = 0; j < grid; ++j) {
        for (int k = 0; k < grid; ++k) {
          Cell cell{0.0, {2 * M_PI * i / grid, M_PI * j / (grid - 1), 2 * M_PI * k / grid}};
          cell.value = std::abs(scaled(c, cell.angles));
          cells.push_back(cell);
        }
      }
    }
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(starts), cells.size());
    std::partial_sort(cells.begin(), cells.begin() + static_cast<std::ptrdiff_t>(n), cells.end(),
                      [](const Cell& a, const Cell& b) { return a.value > b.value; });
    const double grid_max = cells.front().value;
    double best = grid_max;
    double best_at[3] = {cells.front().angles[0], cells.front().angles[1], cells.front().angles[2]};
    for (std::size_t s = 0; s < n; ++s) {
      double x[3] = {cells[s].angles[0], cells[s].angles[1], cells[s].angles[2]};
      ceres::GradientProblem problem(new NegSquare(c));
      ceres::GradientProblemSolver::Options options;
      options.max_num_iterations = 200;
      options.function_tolerance = 1e-16;
      options.gradient_tolerance = 1e-14;
      ceres::GradientProblemSolver::Summary summary;
      ceres::Solve(options, problem, x, &summary);
      const double v = std::abs(scaled(c, x));
      if (v > best) {
        best = v;
        std::copy(x, x + 3, best_at);
      }
    }
    const auto at = rogsh::normalize({best_at[0], best_at[1], best_at[2]});
    std::printf("channel %d (l=%d): grid max %.12f, refined max %.12f at (%.6f, %.6f, %.6f); built-in %.12f, "
                "rel diff %.2e\n",
                c, rogsh::kDegrees[c], grid_max, best, at.phi1, at.Phi, at.phi2, rogsh::kNormalizers[c],
                std::abs(best - rogsh::kNormalizers[c]) / rogsh::kNormalizers[c]);
  }
  return 0;
}
