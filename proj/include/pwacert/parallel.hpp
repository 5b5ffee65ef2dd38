#pragma once

// Every data-parallel kernel in the library takes an Exec tag. Exec::serial
// runs the plain reference loop that tests compare the OpenMP path against.

#ifdef PWACERT_USE_OPENMP
#include <omp.h>
#endif

namespace pwacert {

enum class Exec { serial, parallel };

namespace par {

inline bool openmp_enabled() {
#ifdef PWACERT_USE_OPENMP
  return true;
#else
  return false;
#endif
}

inline int max_threads() {
#ifdef PWACERT_USE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_threads(int n) {
#ifdef PWACERT_USE_OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

}  // namespace par
}  // namespace pwacert
