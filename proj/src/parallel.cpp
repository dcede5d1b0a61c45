#include "calm/parallel.hpp"

#include <atomic>
#include <cstdlib>

namespace calm::par {

namespace {
std::atomic<bool> g_serial{false};

bool env_serial() {
  const char* v = std::getenv("CALM_SERIAL");
  return v != nullptr && v[0] != '\0' && v[0] != '0';
}
}  // namespace

void set_serial(bool serial) { g_serial.store(serial, std::memory_order_relaxed); }

bool serial() {
  static const bool from_env = env_serial();
  return from_env || g_serial.load(std::memory_order_relaxed);
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace calm::par
