#pragma once

#include <utility>

#include "psqueeze/error.hpp"
#include "psqueeze/measure.hpp"

// Generalized ripple effect: every slice affected by one root cause keeps
// (f - v) / (f + v) equal to that of the root cause itself.
namespace psqueeze::gre {

/// Deviation score (f - v) / (f + v), in [-1, 1]. Positive when the real
/// value dropped below the forecast.
inline double deviation_score(double real, double forecast) {
  const double sum = real + forecast;
  if (!(sum > 0.0)) throw DomainError("deviation score undefined: real and forecast are both zero");
  return (forecast - real) / sum;
}

/// Plain ripple-effect deviation (f - v) / f.
inline double relative_deviation(double real, double forecast) {
  if (forecast == 0.0) throw DomainError("relative deviation undefined for zero forecast");
  return (forecast - real) / forecast;
}

/// The real value a slice with forecast `forecast` should take if its
/// deviation score equals `score`.
inline double expected_abnormal_value(double forecast, double score) {
  if (score <= -1.0) throw DomainError("expected abnormal value unbounded at deviation score -1");
  return forecast * (1.0 - score) / (1.0 + score);
}

/// h(M1, M2) for the measure kind. Fundamental measures pass the first
/// operand through.
inline double derived_value(const MeasureSpec& spec, std::pair<double, double> operands) {
  switch (spec.kind) {
    case MeasureKind::fundamental:
      return operands.first;
    case MeasureKind::quotient:
      if (operands.second == 0.0) throw DomainError("quotient measure has zero denominator");
      return operands.first / operands.second;
    case MeasureKind::product:
      return operands.first * operands.second;
  }
  return operands.first;
}

}  // namespace psqueeze::gre
