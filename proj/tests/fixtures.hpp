#pragma once

#include "psqueeze/data.hpp"

namespace fixtures {

// Dollar amount per (Province, ISP); the first two rows (Beijing) are abnormal.
inline constexpr const char* kProvinceIsp =
    "Province,ISP,real,predict\n"
    "Beijing,China Mobile,5,10\n"
    "Beijing,China Unicom,10,20\n"
    "Shanghai,China Unicom,30,31\n"
    "Guangdong,China Mobile,10,9.8\n"
    "Zhejiang,China Unicom,2,2\n"
    "Guangdong,China Unicom,200,210\n"
    "Shanxi,China Unicom,20,22\n"
    "Jiangsu,China Unicom,200,203\n"
    "Tianjin,China Mobile,41,43\n";

// Dollar amounts are not counts, so the Dirac family applies.
inline psqueeze::Snapshot province_isp() {
  return psqueeze::parse_snapshot(kProvinceIsp,
                                  psqueeze::MeasureSpec::fundamental("", psqueeze::DistributionFamily::none));
}

}  // namespace fixtures
