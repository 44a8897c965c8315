#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cldl/rng.hpp"
#include "cldl/tensor.hpp"

namespace cldl {

// An in-memory labelled image collection. Images live in a single
// {n, channels, height, width} tensor with values in [0, 1]; labels are class
// indices below n_classes.
struct Dataset {
  Tensor images;
  std::vector<std::int64_t> labels;
  std::int64_t n_classes = 0;
  std::string split;

  std::int64_t size() const;
  // Shape of one example: {channels, height, width}.
  Shape example_shape() const;
  std::int64_t example_numel() const;

  // Throws config_error if the invariants above do not hold.
  void validate() const;
};

// Reads an IDX image/label file pair (the MNIST container format: big-endian
// magic, big-endian extents, raw unsigned bytes). Pixels are scaled to
// [0, 1] by dividing by 255. Throws config_error on unreadable files, wrong
// magic, truncated payloads, or an image/label count mismatch.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Writes the dataset back out as an IDX pair. Pixels are quantised with
// llround(v * 255); a dataset whose values already lie on the 1/255 grid
// round-trips bit-exactly through save_idx + load_idx.
void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path);

// Reads one or more CIFAR-10 binary batch files (records of 1 label byte
// followed by 3072 channel-planar pixel bytes). Throws config_error on
// unreadable files, sizes that are not a whole number of records, or label
// bytes outside [0, 10).
Dataset load_cifar10(const std::vector<std::string>& batch_paths);

// One minibatch drawn from a dataset.
struct Batch {
  Tensor images;  // {b, channels, height, width}, no grad
  std::vector<std::int64_t> labels;
};

// Walks a fixed index order over a dataset in consecutive chunks. The final
// batch is short when the subset size is not a multiple of batch_size.
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, std::vector<std::int64_t> order,
                std::int64_t batch_size);

  bool has_next() const;
  Batch next();
  std::int64_t n_batches() const;

 private:
  const Dataset* ds_;
  std::vector<std::int64_t> order_;
  std::int64_t batch_size_;
  std::size_t pos_ = 0;
};

// Takes the first n examples of the dataset, shuffles their visit order with
// a Fisher-Yates permutation seeded by `seed`, and returns an iterator over
// consecutive batches. Identical arguments always produce identical batches.
// Throws config_error if n exceeds the dataset size, and invalid_argument on
// non-positive n or batch_size.
BatchIterator subset_shuffle_batch(const Dataset& ds, std::int64_t n,
                                   std::uint64_t seed, std::int64_t batch_size);

}  // namespace cldl
