#include "cldl/dataset.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

#include "cldl/errors.hpp"

namespace cldl {
namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::vector<unsigned char> read_all_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot open file: " + path);
  in.seekg(0, std::ios::end);
  const std::streamoff len = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(len));
  if (len > 0) in.read(reinterpret_cast<char*>(bytes.data()), len);
  if (!in) throw config_error("failed to read file: " + path);
  return bytes;
}

std::uint32_t be32_at(const std::vector<unsigned char>& b, std::size_t off,
                      const std::string& path) {
  if (off + 4 > b.size()) throw config_error("truncated IDX header in " + path);
  return (static_cast<std::uint32_t>(b[off]) << 24) |
         (static_cast<std::uint32_t>(b[off + 1]) << 16) |
         (static_cast<std::uint32_t>(b[off + 2]) << 8) |
         static_cast<std::uint32_t>(b[off + 3]);
}

void append_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>((v >> 16) & 0xff));
  out.push_back(static_cast<unsigned char>((v >> 8) & 0xff));
  out.push_back(static_cast<unsigned char>(v & 0xff));
}

void write_all_bytes(const std::string& path,
                     const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw config_error("cannot open file for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw config_error("failed to write file: " + path);
}

}  // namespace

std::int64_t Dataset::size() const {
  return images.defined() ? images.shape()[0] : 0;
}

Shape Dataset::example_shape() const {
  const Shape& s = images.shape();
  return Shape(s.begin() + 1, s.end());
}

std::int64_t Dataset::example_numel() const { return numel(example_shape()); }

void Dataset::validate() const {
  if (!images.defined() || images.rank() != 4)
    throw config_error("dataset images must be a {n, c, h, w} tensor");
  if (static_cast<std::int64_t>(labels.size()) != size())
    throw config_error("dataset has " + std::to_string(size()) +
                       " images but " + std::to_string(labels.size()) +
                       " labels");
  if (n_classes <= 0) throw config_error("dataset n_classes must be positive");
  for (std::int64_t y : labels) {
    if (y < 0 || y >= n_classes)
      throw config_error("dataset label " + std::to_string(y) +
                         " outside [0, " + std::to_string(n_classes) + ")");
  }
  for (double v : images.data()) {
    if (!(v >= 0.0 && v <= 1.0))
      throw config_error("dataset pixel outside [0, 1]");
  }
}

Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path) {
  const auto img_bytes = read_all_bytes(images_path);
  const auto lbl_bytes = read_all_bytes(labels_path);

  const std::uint32_t img_magic = be32_at(img_bytes, 0, images_path);
  if (img_magic != kImagesMagic)
    throw config_error("bad IDX image magic in " + images_path +
                       " (got " + std::to_string(img_magic) + ")");
  const std::uint32_t lbl_magic = be32_at(lbl_bytes, 0, labels_path);
  if (lbl_magic != kLabelsMagic)
    throw config_error("bad IDX label magic in " + labels_path +
                       " (got " + std::to_string(lbl_magic) + ")");

  const std::uint32_t n_images = be32_at(img_bytes, 4, images_path);
  const std::uint32_t rows = be32_at(img_bytes, 8, images_path);
  const std::uint32_t cols = be32_at(img_bytes, 12, images_path);
  const std::uint32_t n_labels = be32_at(lbl_bytes, 4, labels_path);

  if (n_images != n_labels)
    throw config_error("IDX count mismatch: " + std::to_string(n_images) +
                       " images vs " + std::to_string(n_labels) + " labels");

  const std::size_t want_img =
      16 + static_cast<std::size_t>(n_images) * rows * cols;
  if (img_bytes.size() != want_img)
    throw config_error("truncated IDX image payload in " + images_path +
                       " (expected " + std::to_string(want_img) + " bytes, got " +
                       std::to_string(img_bytes.size()) + ")");
  const std::size_t want_lbl = 8 + static_cast<std::size_t>(n_labels);
  if (lbl_bytes.size() != want_lbl)
    throw config_error("truncated IDX label payload in " + labels_path +
                       " (expected " + std::to_string(want_lbl) + " bytes, got " +
                       std::to_string(lbl_bytes.size()) + ")");

  Dataset ds;
  ds.images = zeros({static_cast<std::int64_t>(n_images), 1,
                     static_cast<std::int64_t>(rows),
                     static_cast<std::int64_t>(cols)});
  double* px = ds.images.raw_data().data();
  const std::size_t n_px = static_cast<std::size_t>(n_images) * rows * cols;
  for (std::size_t i = 0; i < n_px; ++i) px[i] = img_bytes[16 + i] / 255.0;

  ds.labels.reserve(n_labels);
  std::int64_t max_label = -1;
  for (std::uint32_t i = 0; i < n_labels; ++i) {
    const std::int64_t y = lbl_bytes[8 + i];
    ds.labels.push_back(y);
    if (y > max_label) max_label = y;
  }
  // Class count is not stored in the container; infer it from the labels but
  // never report fewer than the 10 digit classes.
  ds.n_classes = std::max<std::int64_t>(10, max_label + 1);
  return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path) {
  ds.validate();
  const Shape& s = ds.images.shape();
  if (s[1] != 1)
    throw config_error("IDX images are single-channel; got " +
                       std::to_string(s[1]) + " channels");

  std::vector<unsigned char> img_bytes;
  img_bytes.reserve(16 + static_cast<std::size_t>(ds.images.size()));
  append_be32(img_bytes, kImagesMagic);
  append_be32(img_bytes, static_cast<std::uint32_t>(s[0]));
  append_be32(img_bytes, static_cast<std::uint32_t>(s[2]));
  append_be32(img_bytes, static_cast<std::uint32_t>(s[3]));
  for (double v : ds.images.data())
    img_bytes.push_back(static_cast<unsigned char>(std::llround(v * 255.0)));

  std::vector<unsigned char> lbl_bytes;
  lbl_bytes.reserve(8 + ds.labels.size());
  append_be32(lbl_bytes, kLabelsMagic);
  append_be32(lbl_bytes, static_cast<std::uint32_t>(ds.labels.size()));
  for (std::int64_t y : ds.labels)
    lbl_bytes.push_back(static_cast<unsigned char>(y));

  write_all_bytes(images_path, img_bytes);
  write_all_bytes(labels_path, lbl_bytes);
}

Dataset load_cifar10(const std::vector<std::string>& batch_paths) {
  if (batch_paths.empty())
    throw config_error("load_cifar10 requires at least one batch file");
  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;

  std::vector<unsigned char> all;
  for (const auto& path : batch_paths) {
    const auto bytes = read_all_bytes(path);
    if (bytes.empty() || bytes.size() % kRecord != 0)
      throw config_error("CIFAR-10 batch " + path + " is not a whole number of " +
                         std::to_string(kRecord) + "-byte records");
    all.insert(all.end(), bytes.begin(), bytes.end());
  }

  const std::int64_t n = static_cast<std::int64_t>(all.size() / kRecord);
  Dataset ds;
  ds.images = zeros({n, 3, 32, 32});
  ds.labels.reserve(static_cast<std::size_t>(n));
  ds.n_classes = 10;
  double* px = ds.images.raw_data().data();
  for (std::int64_t i = 0; i < n; ++i) {
    const unsigned char* rec = all.data() + static_cast<std::size_t>(i) * kRecord;
    if (rec[0] >= 10)
      throw config_error("CIFAR-10 label byte " + std::to_string(rec[0]) +
                         " outside [0, 10)");
    ds.labels.push_back(rec[0]);
    for (std::size_t j = 0; j < kRecord - 1; ++j)
      px[static_cast<std::size_t>(i) * (kRecord - 1) + j] = rec[1 + j] / 255.0;
  }
  return ds;
}

BatchIterator::BatchIterator(const Dataset& ds, std::vector<std::int64_t> order,
                             std::int64_t batch_size)
    : ds_(&ds), order_(std::move(order)), batch_size_(batch_size) {}

bool BatchIterator::has_next() const { return pos_ < order_.size(); }

std::int64_t BatchIterator::n_batches() const {
  const auto n = static_cast<std::int64_t>(order_.size());
  return (n + batch_size_ - 1) / batch_size_;
}

Batch BatchIterator::next() {
  if (!has_next()) throw std::out_of_range("batch iterator exhausted");
  const std::size_t take =
      std::min(static_cast<std::size_t>(batch_size_), order_.size() - pos_);

  const std::int64_t ex = ds_->example_numel();
  Shape bshape = ds_->images.shape();
  bshape[0] = static_cast<std::int64_t>(take);

  Batch batch;
  batch.images = zeros(bshape);
  batch.labels.reserve(take);
  double* dst = batch.images.raw_data().data();
  const double* src = ds_->images.data().data();
  for (std::size_t k = 0; k < take; ++k) {
    const std::int64_t idx = order_[pos_ + k];
    std::memcpy(dst + static_cast<std::size_t>(k * ex),
                src + static_cast<std::size_t>(idx * ex),
                static_cast<std::size_t>(ex) * sizeof(double));
    batch.labels.push_back(ds_->labels[static_cast<std::size_t>(idx)]);
  }
  pos_ += take;
  return batch;
}

BatchIterator subset_shuffle_batch(const Dataset& ds, std::int64_t n,
                                   std::uint64_t seed,
                                   std::int64_t batch_size) {
  if (n <= 0) throw std::invalid_argument("subset size must be positive");
  if (batch_size <= 0) throw std::invalid_argument("batch size must be positive");
  if (n > ds.size())
    throw config_error("requested subset of " + std::to_string(n) +
                       " examples from a dataset of " +
                       std::to_string(ds.size()));

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  for (std::int64_t i = n - 1; i > 0; --i) {
    const std::int64_t j = rng.uniform_int(i + 1);
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(j)]);
  }
  return BatchIterator(ds, std::move(order), batch_size);
}

}  // namespace cldl
