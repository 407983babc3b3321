#pragma once

namespace ramit {

// Worker-thread ceiling from RAMIT_THREADS (default 1). All shipped kernels
// currently run single-threaded for bit-reproducibility; the cap bounds any
// future parallel path.
int worker_thread_cap();

}  // namespace ramit
