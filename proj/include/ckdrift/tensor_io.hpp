#pragma once

// Reader/writer for the checkpoint container:
//
//   [u64 little-endian header length H][H bytes of UTF-8 JSON][payload]
//
// The JSON header maps tensor name -> {"dtype": "F32"|"F64", "shape": [m, n],
// "data_offsets": [begin, end]} with offsets relative to the payload start.
// Regions tile the payload exactly, in ascending offset order.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace ckdrift {

enum class Dtype { F32, F64 };

std::size_t dtype_size(Dtype dtype);
std::string_view dtype_tag(Dtype dtype);

struct Shape {
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t numel() const { return rows * cols; }
    bool operator==(const Shape&) const = default;
};

/// A named row-major matrix. 1-D data is stored as a single row.
class Tensor {
public:
    Tensor(std::string name, Shape shape, std::vector<float> data);
    Tensor(std::string name, Shape shape, std::vector<double> data);

    const std::string& name() const { return name_; }
    Dtype dtype() const { return std::holds_alternative<std::vector<float>>(data_) ? Dtype::F32 : Dtype::F64; }
    const Shape& shape() const { return shape_; }
    std::size_t rows() const { return shape_.rows; }
    std::size_t cols() const { return shape_.cols; }
    std::size_t numel() const { return shape_.numel(); }
    std::size_t byte_size() const { return numel() * dtype_size(dtype()); }

    double at(std::size_t index) const;
    double at(std::size_t row, std::size_t col) const { return at(row * shape_.cols + col); }

    /// Widened copy of elements [first, first + out.size()).
    void copy_to(std::size_t first, std::span<double> out) const;

    std::span<const float> f32() const { return std::get<std::vector<float>>(data_); }
    std::span<const double> f64() const { return std::get<std::vector<double>>(data_); }

    /// Raw little-endian payload bytes as they appear on disk.
    std::vector<std::byte> payload_bytes() const;

    bool operator==(const Tensor& other) const;

private:
    void validate() const;

    std::string name_;
    Shape shape_;
    std::variant<std::vector<float>, std::vector<double>> data_;
};

struct Checkpoint {
    std::map<std::string, Tensor, std::less<>> tensors;
    std::string source_path;
    std::uint64_t byte_size = 0;

    void add(Tensor tensor);
    const Tensor* find(std::string_view name) const;

    /// Equality over tensor contents only.
    bool operator==(const Checkpoint& other) const { return tensors == other.tensors; }
};

/// Header record for one tensor. Offsets are relative to the payload start.
struct TensorEntry {
    std::string name;
    Dtype dtype = Dtype::F32;
    Shape shape;
    std::uint64_t begin = 0;
    std::uint64_t end = 0;

    std::uint64_t byte_size() const { return end - begin; }
};

/// Parses and validates a container header without touching the payload.
/// Tensors are then streamed through independent cursors, so several threads
/// can read different tensors of one file at once.
class CheckpointReader {
public:
    explicit CheckpointReader(std::filesystem::path path);

    const std::filesystem::path& path() const { return path_; }
    std::uint64_t file_size() const { return file_size_; }
    std::uint64_t payload_offset() const { return payload_offset_; }

    /// Entries in ascending offset order.
    const std::vector<TensorEntry>& entries() const { return entries_; }
    const TensorEntry* find(std::string_view name) const;

    /// Sequential reader over the elements of one tensor, widened to double.
    class Cursor {
    public:
        Cursor(const CheckpointReader& reader, const TensorEntry& entry);

        std::size_t remaining() const { return remaining_; }

        /// Reads min(out.size(), remaining()) elements and returns that count.
        /// Throws NonFiniteValue on NaN/Inf.
        std::size_t read(std::span<double> out);

    private:
        const TensorEntry* entry_;
        std::ifstream in_;
        std::size_t remaining_;
        std::vector<char> raw_;
    };

    Cursor open(const TensorEntry& entry) const { return Cursor(*this, entry); }

private:
    std::filesystem::path path_;
    std::uint64_t file_size_ = 0;
    std::uint64_t payload_offset_ = 0;
    std::vector<TensorEntry> entries_;
    std::map<std::string, std::size_t, std::less<>> by_name_;
};

struct TensorDecl {
    std::string name;
    Dtype dtype = Dtype::F32;
    Shape shape;
};

/// Writes a container incrementally. Tensors must be supplied in lexicographic
/// name order (the order of the payload) and each must be written in full
/// before the next one starts.
class CheckpointWriter {
public:
    CheckpointWriter(const std::filesystem::path& path, std::vector<TensorDecl> decls);

    void write(std::span<const float> values);
    void write(std::span<const double> values);
    void finish();

private:
    void write_raw(const void* data, std::size_t count, Dtype dtype);

    std::filesystem::path path_;
    std::ofstream out_;
    std::vector<TensorDecl> decls_;
    std::size_t current_ = 0;
    std::size_t written_in_current_ = 0;
    bool finished_ = false;
};

/// Serialized header bytes for the given declarations (sorted by name).
std::string encode_header(std::vector<TensorDecl> decls);

Checkpoint load_checkpoint(const std::filesystem::path& path);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

}  // namespace ckdrift
