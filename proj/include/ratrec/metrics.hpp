#pragma once

#include <cstddef>
#include <optional>

namespace ratrec::eval {

/// 1-based rank of the relevant item; nullopt means it was not ranked (rank infinity).
using Rank = std::optional<std::size_t>;

/// 1 if rank <= k, else 0. Throws PreconditionError for k == 0 or rank == 0.
double hr_at_k(Rank rank, std::size_t k);

/// Single relevant item, IDCG = 1: 1 / log2(rank + 1) when rank <= k, else 0.
double ndcg_at_k(Rank rank, std::size_t k);

}  // namespace ratrec::eval
