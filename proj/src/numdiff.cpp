#include "hybridkoop/numdiff.hpp"

namespace hybridkoop::numdiff {

// Fornberg, "Generation of finite difference formulas on arbitrarily spaced
// grids" (Math. Comp. 1988), specialised to a single derivative order.
std::vector<double> fd_weights(std::span<const double> nodes, double x0, int order) {
  const auto n = static_cast<int>(nodes.size());
  if (order < 0 || n <= order) {
    throw Error(ErrorCode::invalid_argument, "stencil too small for derivative order");
  }
  // c[i][k]: weight of node i for derivative k
  std::vector<std::vector<double>> c(static_cast<std::size_t>(n),
                                     std::vector<double>(static_cast<std::size_t>(order + 1), 0.0));
  double c1 = 1.0;
  double c4 = nodes[0] - x0;
  c[0][0] = 1.0;
  for (int i = 1; i < n; ++i) {
    const int mn = std::min(i, order);
    double c2 = 1.0;
    const double c5 = c4;
    c4 = nodes[static_cast<std::size_t>(i)] - x0;
    for (int j = 0; j < i; ++j) {
      const double c3 = nodes[static_cast<std::size_t>(i)] - nodes[static_cast<std::size_t>(j)];
      c2 *= c3;
      auto& ci = c[static_cast<std::size_t>(i)];
      auto& cj = c[static_cast<std::size_t>(j)];
      if (j == i - 1) {
        const auto& cprev = c[static_cast<std::size_t>(i - 1)];
        for (int k = mn; k >= 1; --k) {
          ci[static_cast<std::size_t>(k)] =
              c1 * (k * cprev[static_cast<std::size_t>(k - 1)] - c5 * cprev[static_cast<std::size_t>(k)]) / c2;
        }
        ci[0] = -c1 * c5 * cprev[0] / c2;
      }
      for (int k = mn; k >= 1; --k) {
        cj[static_cast<std::size_t>(k)] =
            (c4 * cj[static_cast<std::size_t>(k)] - k * cj[static_cast<std::size_t>(k - 1)]) / c3;
      }
      cj[0] = c4 * cj[0] / c3;
    }
    c1 = c2;
  }
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = c[static_cast<std::size_t>(i)][static_cast<std::size_t>(order)];
  return w;
}

}  // namespace hybridkoop::numdiff
