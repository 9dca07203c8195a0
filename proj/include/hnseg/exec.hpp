#pragma once

namespace hnseg::exec {

// Global execution mode. Operator kernels are decomposed so that every
// output element is produced by exactly one loop iteration and every
// reduction runs serially inside its owning iteration; results are therefore
// bit-identical between parallel and sequential mode. Sequential mode is
// still the stated determinism contract and what the reproducibility tests
// pin down.
bool parallel_enabled();
void set_parallel(bool enabled);

// 0 = OpenMP default
int thread_count();
void set_thread_count(int n);

}  // namespace hnseg::exec
