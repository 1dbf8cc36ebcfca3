#include "ratrec/metrics.hpp"

#include <cmath>

#include "ratrec/error.hpp"

namespace ratrec::eval {

namespace {

bool within(Rank rank, std::size_t k) {
  if (k == 0) throw PreconditionError("metric cutoff k must be at least 1");
  if (rank && *rank == 0) throw PreconditionError("ranks are 1-based");
  return rank && *rank <= k;
}

}  // namespace

double hr_at_k(Rank rank, std::size_t k) { return within(rank, k) ? 1.0 : 0.0; }

double ndcg_at_k(Rank rank, std::size_t k) {
  if (!within(rank, k)) return 0.0;
  return 1.0 / std::log2(static_cast<double>(*rank) + 1.0);
}

}  // namespace ratrec::eval
