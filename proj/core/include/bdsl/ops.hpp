#pragma once

#include "bdsl/tape.hpp"

namespace bdsl::ops {

/// Elementwise a + b (identical shapes).
template <typename T>
Var add(BasicTape<T>& tape, Var a, Var b);

/// Elementwise a * b (identical shapes).
template <typename T>
Var mul(BasicTape<T>& tape, Var a, Var b);

/// Sum of all elements, shape {1}.
template <typename T>
Var sum(BasicTape<T>& tape, Var a);

/// Joins a and b along `axis`; the backward splits at the same boundary.
template <typename T>
Var concat(BasicTape<T>& tape, Var a, Var b, std::size_t axis);

/// View with a new shape of equal element count (flatten is reshape to [B, -]).
template <typename T>
Var reshape(BasicTape<T>& tape, Var a, Shape shape);

/// [B, ...] -> [B, prod(...)].
template <typename T>
Var flatten(BasicTape<T>& tape, Var a);

}  // namespace bdsl::ops
