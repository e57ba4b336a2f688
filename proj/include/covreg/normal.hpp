#pragma once

namespace covreg {

/// Standard normal CDF, accurate to ~1e-15 via erfc.
double normal_cdf(double x);

/// Standard normal quantile (inverse CDF). Rational initial guess refined
/// with one Halley step against erfc; absolute error below 1e-12 on (0,1).
double normal_quantile(double prob);

}  // namespace covreg
