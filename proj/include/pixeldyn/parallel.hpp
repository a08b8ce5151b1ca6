#pragma once

#ifdef _OPENMP
#include <omp.h>
#endif

#include <Eigen/Core>

namespace pixeldyn {

// Worker count for dense kernels and elementwise maps. Results are
// deterministic for a fixed thread count.
inline void set_threads(int n) {
  if (n < 1) n = 1;
#ifdef _OPENMP
  omp_set_num_threads(n);
#endif
  Eigen::setNbThreads(n);
}

}  // namespace pixeldyn
