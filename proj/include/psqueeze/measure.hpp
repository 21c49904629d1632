#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "psqueeze/error.hpp"

namespace psqueeze {

enum class MeasureKind { fundamental, quotient, product };

// Noise model used when turning a leaf's (v, f) pair into a distribution of
// deviation scores. `poisson` requires integer real values.
enum class DistributionFamily { poisson, none };

/// Describes the measure under analysis in terms of the snapshot's value
/// columns. A fundamental measure reads one column pair (`real_X`/`predict_X`,
/// or plain `real`/`predict` when the operand name is empty); derived measures
/// combine two fundamental columns.
struct MeasureSpec {
  MeasureKind kind = MeasureKind::fundamental;
  std::vector<std::string> operands{""};
  DistributionFamily family = DistributionFamily::poisson;

  static MeasureSpec fundamental(std::string column = "",
                                 DistributionFamily family = DistributionFamily::poisson) {
    return MeasureSpec{MeasureKind::fundamental, {std::move(column)}, family};
  }
  static MeasureSpec quotient(std::string numerator, std::string denominator) {
    return MeasureSpec{MeasureKind::quotient, {std::move(numerator), std::move(denominator)},
                       DistributionFamily::none};
  }
  static MeasureSpec product(std::string a, std::string b) {
    return MeasureSpec{MeasureKind::product, {std::move(a), std::move(b)}, DistributionFamily::none};
  }

  bool derived() const noexcept { return kind != MeasureKind::fundamental; }

  void validate() const {
    const std::size_t expected = derived() ? 2 : 1;
    if (operands.size() != expected)
      throw Error(derived() ? "derived measure needs exactly two operand columns"
                            : "fundamental measure needs exactly one operand column");
    if (derived() && (operands[0].empty() || operands[1].empty()))
      throw Error("derived measure operands must be named");
    if (derived() && family == DistributionFamily::poisson)
      throw Error("derived measures do not support the poisson distribution family");
  }

  /// Parses the CLI form:
  ///   fundamental[:<column>][@poisson|@none]
  ///   quotient:<numerator>/<denominator>
  ///   product:<a>*<b>
  static MeasureSpec parse(std::string_view text) {
    DistributionFamily family = DistributionFamily::poisson;
    bool family_given = false;
    if (const auto at = text.rfind('@'); at != std::string_view::npos) {
      const auto fam = text.substr(at + 1);
      if (fam == "poisson") {
        family = DistributionFamily::poisson;
      } else if (fam == "none") {
        family = DistributionFamily::none;
      } else {
        throw Error("unknown distribution family '" + std::string(fam) + "'");
      }
      family_given = true;
      text = text.substr(0, at);
    }
    const auto colon = text.find(':');
    const auto head = text.substr(0, colon);
    const auto rest = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);

    MeasureSpec spec;
    if (head == "fundamental") {
      spec = fundamental(std::string(rest), family);
    } else if (head == "quotient" || head == "product") {
      const char sep = head == "quotient" ? '/' : '*';
      const auto pos = rest.find(sep);
      if (pos == std::string_view::npos)
        throw Error("expected '" + std::string(head) + ":<a>" + sep + "<b>'");
      spec = head == "quotient" ? quotient(std::string(rest.substr(0, pos)), std::string(rest.substr(pos + 1)))
                                : product(std::string(rest.substr(0, pos)), std::string(rest.substr(pos + 1)));
      if (family_given) spec.family = family;
    } else {
      throw Error("unknown measure kind '" + std::string(head) + "'");
    }
    spec.validate();
    return spec;
  }

  std::string to_string() const {
    switch (kind) {
      case MeasureKind::fundamental:
        return "fundamental" + (operands[0].empty() ? std::string{} : ":" + operands[0]) +
               (family == DistributionFamily::poisson ? "@poisson" : "@none");
      case MeasureKind::quotient:
        return "quotient:" + operands[0] + "/" + operands[1];
      case MeasureKind::product:
        return "product:" + operands[0] + "*" + operands[1];
    }
    return {};
  }
};

}  // namespace psqueeze
