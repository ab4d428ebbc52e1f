#include "facade_gp/parallel.hpp"

#include <cstdlib>
#include <string>

namespace facade_gp {

int resolve_threads(int requested) {
  if (const char* env = std::getenv("FACADE_GP_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v > 0) return v;
    } catch (const std::exception&) {
    }
  }
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace facade_gp
