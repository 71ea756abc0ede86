#include <cuda_runtime.h>

// Largest p in [lo, hi) with array[p] <= target.
__device__ int binarySearchBefore(const int* array, int lo, int hi, int target);

// array[idx] += sum of value over the G lanes; all lanes share idx.
template <typename T, int G>
__device__ void atomicAddGroup(T* array, int idx, T value);

// Segmented sum over runs of equal idx; the last lane of each run adds its total.
template <typename T, int G>
__device__ void segReduceGroup(T* array, int idx, T value);

// launch: grid = 32, block = 256, N = 4
__global__ void spmm_kernel(
    int A1_dimension,
    int A2_dimension,
    int B2_dimension,
    int C2_dimension,
    const int* __restrict__ A2_pos,
    const int* __restrict__ A2_crd,
    const double* __restrict__ A_vals,
    const double* __restrict__ B_vals,
    double* __restrict__ C_vals,
    const int* __restrict__ i_blockStarts) {
  int ko = blockIdx.x;
  int warp = threadIdx.x / 32;
  for (int kii = 0; kii < 1; kii++) {
    double tjpos1C = 0.0;
    int ki = warp + kii;
    int io = ko * 8 + ki;
    if (io >= A1_dimension * 4) {
      break;
    }
    int i = io / 4;
    int k = io % 4;
    int jpos1 = threadIdx.x % 32;
    for (int jpos0 = 0; jpos0 < (A2_pos[i + 1] - A2_pos[i] + 31) / 32; jpos0++) {
      int jpos = jpos0 * 32 + jpos1;
      if (jpos >= A2_pos[i + 1] - A2_pos[i]) {
        break;
      }
      int jposA = A2_pos[i] + jpos;
      int j = A2_crd[jposA];
      int kB = j * B2_dimension + k;
      tjpos1C = tjpos1C + A_vals[jposA] * B_vals[kB];
    }
    int kC = i * C2_dimension + k;
    atomicAddGroup<double,32>(C_vals, kC, tjpos1C);
  }
}
