#include "ramit/threads.hpp"

#include <cstdlib>
#include <string>

namespace ramit {

int worker_thread_cap() {
    static int cap = [] {
        const char* env = std::getenv("RAMIT_THREADS");
        if (!env) return 1;
        try {
            int v = std::stoi(env);
            return v < 1 ? 1 : v;
        } catch (...) {
            return 1;
        }
    }();
    return cap;
}

}  // namespace ramit
