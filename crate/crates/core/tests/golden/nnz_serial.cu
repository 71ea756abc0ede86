#include <cuda_runtime.h>

// Largest p in [lo, hi) with array[p] <= target.
__device__ int binarySearchBefore(const int* array, int lo, int hi, int target);

// array[idx] += sum of value over the G lanes; all lanes share idx.
template <typename T, int G>
__device__ void atomicAddGroup(T* array, int idx, T value);

// Segmented sum over runs of equal idx; the last lane of each run adds its total.
template <typename T, int G>
__device__ void segReduceGroup(T* array, int idx, T value);

// launch: grid = 1, block = 64, N = 4
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
  int warp = threadIdx.x;
  int thread = 0;
  for (int dense_val = 0; dense_val < 4; dense_val++) {
    double tnnzC = 0.0;
    int ko = dense_val;
    int k = ko + thread;
    int pA2_begin = i_blockStarts[block];
    int pA2_end = min(i_blockStarts[block + 1] + 1, A1_dimension);
    int i_pos = binarySearchBefore(A2_pos, pA2_begin, pA2_end, block * 2048 + warp * 32);
    int i = i_pos;
    for (int nnz = 0; nnz < 32; nnz++) {
      int fpos1 = warp * 32 + nnz;
      int fposA = block * 2048 + fpos1;
      if (fposA >= A2_pos[A1_dimension]) {
        break;
      }
      int j = A2_crd[fposA];
      while (fposA == A2_pos[i_pos + 1]) {
        i_pos = i_pos + 1;
        i = i_pos;
      }
      int kB = j * B2_dimension + k;
      tnnzC = tnnzC + A_vals[fposA] * B_vals[kB];
      if (fposA + 1 == A2_pos[i_pos + 1]) {
        int kC = i * C2_dimension + k;
        atomicAdd(&C_vals[kC], tnnzC);
        tnnzC = 0.0;
      }
    }
    int kC = i * C2_dimension + k;
    atomicAdd(&C_vals[kC], tnnzC);
  }
}
