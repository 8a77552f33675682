#include "lco/parallel.hpp"

#include <cstdlib>
#include <string>

namespace lco {

std::size_t thread_limit() {
    if (const char* env = std::getenv("LCO_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v >= 1) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

}  // namespace lco
