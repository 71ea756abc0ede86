#include <cuda_runtime.h>

// Largest p in [lo, hi) with array[p] <= target.
__device__ int binarySearchBefore(const int* array, int lo, int hi, int target);

// array[idx] += sum of value over the G lanes; all lanes share idx.
template <typename T, int G>
__device__ void atomicAddGroup(T* array, int idx, T value);

// Segmented sum over runs of equal idx; the last lane of each run adds its total.
template <typename T, int G>
__device__ void segReduceGroup(T* array, int idx, T value);

// launch: grid = 1, block = 256, N = 4
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
  int block = blockIdx.x;
  int warp = threadIdx.x / 4;
  for (int row = 0; row < 1; row++) {
    int thread = threadIdx.x % 4;
    for (int col = 0; col < 1; col++) {
      double tjC = 0.0;
      int io = warp + row;
      int i = block * 64 + io;
      if (i >= A1_dimension) {
        break;
      }
      int ko = thread;
      int k = ko + col;
      for (int jposA = A2_pos[i]; jposA < A2_pos[i + 1]; jposA++) {
        int j = A2_crd[jposA];
        int kB = j * B2_dimension + k;
        tjC = tjC + A_vals[jposA] * B_vals[kB];
      }
      int kC = i * C2_dimension + k;
      C_vals[kC] = C_vals[kC] + tjC;
    }
  }
}
