#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "p2prisk/csv.hpp"
#include "p2prisk/ingest.hpp"
#include "p2prisk/numerics.hpp"

namespace p2prisk {

struct SynthConfig {
  std::uint64_t seed = 7;
  std::size_t n_loans = 6000;
  std::size_t n_months = 120;
  double macro_effect = 0.0;
  YearMonth start{2007, 10};
  double missing_rate = 0.03;
  double ongoing_rate = 0.15;
};

/// Deterministic synthetic fixture in the shape the default schema ingests.
/// Per-loan default probability is logistic in the month's macro level,
/// a few loan features, and an annual seasonal term; the macro series is a
/// slow random walk, so macro_effect = 0 makes defaults independent of it.
inline void synth_generator(const SynthConfig& config, std::ostream& loans_csv,
                            std::ostream& macro_csv) {
  if (config.n_months < 24 || config.n_loans < config.n_months) {
    throw std::invalid_argument("synth_generator: need n_loans >= n_months >= 24");
  }

  Rng root(config.seed);
  Rng macro_rng = root.split();
  Rng loan_rng = root.split();

  Vector macro(config.n_months);
  macro[0] = 7.0;
  for (std::size_t t = 1; t < config.n_months; ++t) {
    macro[t] = std::clamp(macro[t - 1] + 0.25 * macro_rng.normal(), 3.0, 12.0);
  }

  macro_csv << "month,unemp_rate\n";
  for (std::size_t t = 0; t < config.n_months; ++t) {
    const YearMonth ym = YearMonth::from_serial(config.start.serial() + static_cast<int>(t));
    macro_csv << ym.str() << ',' << format_double(macro[t]) << '\n';
  }

  const Schema schema = Schema::lending_club();
  loans_csv << schema.id_column << ',' << schema.month_column << ',' << schema.status_column;
  for (const auto& name : schema.numeric_columns) loans_csv << ',' << name;
  for (const auto& name : schema.categorical_columns) loans_csv << ',' << name;
  loans_csv << '\n';

  static const char* kMonthNames[12] = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                        "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
  auto month_label = [&](std::size_t t) {
    const YearMonth ym = YearMonth::from_serial(config.start.serial() + static_cast<int>(t));
    return std::string(kMonthNames[ym.month - 1]) + "-" + std::to_string(ym.year);
  };

  for (std::size_t loan = 0; loan < config.n_loans; ++loan) {
    // The first n_months loans cover every month once; the rest land randomly.
    const std::size_t t = loan < config.n_months ? loan : loan_rng.below(config.n_months);

    const double loan_amnt = loan_rng.uniform(1000.0, 35000.0);
    const double int_rate = loan_rng.uniform(5.0, 25.0);
    const double annual_inc = 25000.0 + 80000.0 * loan_rng.uniform();
    const double term_months = 36.0;
    const double monthly_rate = int_rate / 1200.0;
    const double installment =
        loan_amnt * monthly_rate / (1.0 - std::pow(1.0 + monthly_rate, -term_months));
    const double open_acc = 2.0 + loan_rng.below(18);
    const double total_acc = open_acc + loan_rng.below(15);
    const double revol_bal = loan_rng.uniform(0.0, 40000.0);
    const double delinq_2yrs = loan_rng.below(4) == 0 ? loan_rng.below(3) : 0.0;
    const double delinq_amnt = delinq_2yrs > 0 ? loan_rng.uniform(0.0, 4000.0) : 0.0;
    const double pub_rec = loan_rng.below(10) == 0 ? 1.0 : 0.0;

    constexpr double kPi = 3.141592653589793238462643383279502884;
    const double seasonal = 0.2 * std::sin(2.0 * kPi * static_cast<double>(t) / 12.0);
    const double logit = -1.7 + config.macro_effect * (macro[t] - 7.0) / 2.0 +
                         0.8 * (int_rate - 15.0) / 10.0 +
                         0.3 * (loan_amnt - 18000.0) / 17000.0 -
                         0.4 * (annual_inc - 65000.0) / 65000.0 + seasonal;
    const double p_default = sigmoid(logit);

    const bool ongoing = loan_rng.uniform() < config.ongoing_rate;
    const bool defaulted = loan_rng.uniform() < p_default;
    std::string status;
    if (ongoing) {
      const std::size_t pick = loan_rng.below(4);
      status = pick == 0   ? "Current"
               : pick == 1 ? "In Grace Period"
               : pick == 2 ? "Late (16-30 days)"
                           : "Late (31-120 days)";
    } else if (defaulted) {
      status = loan_rng.below(2) == 0 ? "Charged Off" : "Default";
    } else {
      status = "Fully Paid";
    }

    const double paid_fraction = defaulted ? loan_rng.uniform(0.0, 0.9) : 1.0;
    const double total_pymnt = installment * term_months * paid_fraction;
    const double last_pymnt_amnt = defaulted ? installment * loan_rng.uniform(0.0, 1.0) : installment;
    const double recoveries = defaulted ? loan_amnt * loan_rng.uniform(0.0, 0.2) : 0.0;
    const double collection_recovery_fee = recoveries * 0.1;
    const double total_rec_late_fee = defaulted ? loan_rng.uniform(0.0, 120.0) : 0.0;

    const char* home = loan_rng.below(5) < 2 ? "RENT" : (loan_rng.below(3) == 0 ? "OWN" : "MORTGAGE");
    const std::size_t verify_pick = loan_rng.below(3);
    const char* verification = verify_pick == 0   ? "Verified"
                               : verify_pick == 1 ? "Source Verified"
                                                  : "Not Verified";
    const char* application = loan_rng.below(10) == 0 ? "Joint App" : "Individual";

    const Vector numerics = {annual_inc, collection_recovery_fee, delinq_amnt, delinq_2yrs,
                             int_rate,   installment,             last_pymnt_amnt, loan_amnt,
                             open_acc,   pub_rec,                 recoveries,  revol_bal,
                             total_acc,  total_pymnt,             total_rec_late_fee};

    loans_csv << "L" << (loan + 1) << ',' << month_label(t) << ',' << status;
    for (double value : numerics) {
      if (loan_rng.uniform() < config.missing_rate) loans_csv << ',';
      else loans_csv << ',' << format_double(std::round(value * 100.0) / 100.0);
    }
    for (const char* value : {home, verification, application}) {
      if (loan_rng.uniform() < config.missing_rate) loans_csv << ',';
      else loans_csv << ',' << value;
    }
    loans_csv << '\n';
  }
}

}  // namespace p2prisk
