#pragma once
#include "nep/kernels.hpp"

namespace nep::kernels::detail {

KernelTable scalar_table();
KernelTable avx2_table();
KernelTable avx512_table();

}  // namespace nep::kernels::detail
