#include "ckdrift/tensor_io.hpp"

#include "ckdrift/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>

namespace ckdrift {

namespace {

using nlohmann::json;

constexpr std::size_t kReadBlockElements = 1 << 16;

template <typename T>
T byteswap_value(T value) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
}

template <typename T>
T load_le(const char* src) {
    T value;
    std::memcpy(&value, src, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        value = byteswap_value(value);
    }
    return value;
}

template <typename T>
void store_le(T value, char* dst) {
    if constexpr (std::endian::native == std::endian::big) {
        value = byteswap_value(value);
    }
    std::memcpy(dst, &value, sizeof(T));
}

Dtype parse_dtype(const std::string& tag, const std::string& name) {
    if (tag == "F32") return Dtype::F32;
    if (tag == "F64") return Dtype::F64;
    throw Error(ErrorCode::UnsupportedDtype, "tensor '" + name + "' has dtype " + tag);
}

bool mul_overflows(std::uint64_t a, std::uint64_t b, std::uint64_t& out) {
    if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) return true;
    out = a * b;
    return false;
}

std::uint64_t header_uint(const json& value, const std::string& what) {
    if (!value.is_number_unsigned() && !(value.is_number_integer() && value.get<std::int64_t>() >= 0)) {
        throw Error(ErrorCode::MalformedHeader, what + " must be a non-negative integer");
    }
    return value.get<std::uint64_t>();
}

TensorEntry parse_entry(const std::string& name, const json& spec) {
    if (name.empty()) throw Error(ErrorCode::MalformedHeader, "empty tensor name");
    if (!spec.is_object()) throw Error(ErrorCode::MalformedHeader, "entry '" + name + "' is not an object");
    for (const char* key : {"dtype", "shape", "data_offsets"}) {
        if (!spec.contains(key)) throw Error(ErrorCode::MalformedHeader, "entry '" + name + "' lacks " + key);
    }
    if (!spec["dtype"].is_string()) throw Error(ErrorCode::MalformedHeader, "dtype of '" + name + "' is not a string");

    TensorEntry entry;
    entry.name = name;
    entry.dtype = parse_dtype(spec["dtype"].get<std::string>(), name);

    const json& shape = spec["shape"];
    if (!shape.is_array() || shape.empty() || shape.size() > 2) {
        throw Error(ErrorCode::MalformedHeader, "shape of '" + name + "' must have rank 1 or 2");
    }
    if (shape.size() == 1) {
        entry.shape = {1, static_cast<std::size_t>(header_uint(shape[0], "shape"))};
    } else {
        entry.shape = {static_cast<std::size_t>(header_uint(shape[0], "shape")),
                       static_cast<std::size_t>(header_uint(shape[1], "shape"))};
    }
    if (entry.shape.rows == 0 || entry.shape.cols == 0) {
        throw Error(ErrorCode::MalformedHeader, "tensor '" + name + "' has an empty dimension");
    }

    const json& offsets = spec["data_offsets"];
    if (!offsets.is_array() || offsets.size() != 2) {
        throw Error(ErrorCode::MalformedHeader, "data_offsets of '" + name + "' must be [begin, end]");
    }
    entry.begin = header_uint(offsets[0], "data_offsets");
    entry.end = header_uint(offsets[1], "data_offsets");
    if (entry.end < entry.begin) throw Error(ErrorCode::MalformedHeader, "data_offsets of '" + name + "' are reversed");

    std::uint64_t numel = 0;
    std::uint64_t bytes = 0;
    if (mul_overflows(entry.shape.rows, entry.shape.cols, numel) || mul_overflows(numel, dtype_size(entry.dtype), bytes)) {
        throw Error(ErrorCode::MalformedHeader, "shape of '" + name + "' overflows");
    }
    if (bytes != entry.byte_size()) {
        throw Error(ErrorCode::MalformedHeader, "tensor '" + name + "' declares " + std::to_string(entry.byte_size()) +
                                                    " bytes but its shape needs " + std::to_string(bytes));
    }
    return entry;
}

}  // namespace

std::size_t dtype_size(Dtype dtype) {
    return dtype == Dtype::F32 ? 4 : 8;
}

std::string_view dtype_tag(Dtype dtype) {
    return dtype == Dtype::F32 ? "F32" : "F64";
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::string name, Shape shape, std::vector<float> data)
    : name_(std::move(name)), shape_(shape), data_(std::move(data)) {
    validate();
}

Tensor::Tensor(std::string name, Shape shape, std::vector<double> data)
    : name_(std::move(name)), shape_(shape), data_(std::move(data)) {
    validate();
}

void Tensor::validate() const {
    if (name_.empty()) throw Error(ErrorCode::InvalidTensor, "tensor name is empty");
    if (shape_.rows == 0 || shape_.cols == 0) {
        throw Error(ErrorCode::InvalidTensor, "tensor '" + name_ + "' has an empty dimension");
    }
    const std::size_t length = std::visit([](const auto& v) { return v.size(); }, data_);
    if (length != shape_.numel()) {
        throw Error(ErrorCode::InvalidTensor, "tensor '" + name_ + "' holds " + std::to_string(length) +
                                                  " values for shape [" + std::to_string(shape_.rows) + ", " +
                                                  std::to_string(shape_.cols) + "]");
    }
    std::visit(
        [this](const auto& values) {
            for (auto v : values) {
                if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "tensor '" + name_ + "'");
            }
        },
        data_);
}

double Tensor::at(std::size_t index) const {
    return std::visit([index](const auto& v) { return static_cast<double>(v[index]); }, data_);
}

void Tensor::copy_to(std::size_t first, std::span<double> out) const {
    std::visit(
        [&](const auto& values) {
            std::copy(values.begin() + static_cast<std::ptrdiff_t>(first),
                      values.begin() + static_cast<std::ptrdiff_t>(first + out.size()), out.begin());
        },
        data_);
}

std::vector<std::byte> Tensor::payload_bytes() const {
    std::vector<std::byte> bytes(byte_size());
    auto* dst = reinterpret_cast<char*>(bytes.data());
    std::visit(
        [dst](const auto& values) {
            using T = typename std::decay_t<decltype(values)>::value_type;
            for (std::size_t i = 0; i < values.size(); ++i) store_le<T>(values[i], dst + i * sizeof(T));
        },
        data_);
    return bytes;
}

bool Tensor::operator==(const Tensor& other) const {
    if (name_ != other.name_ || shape_ != other.shape_ || dtype() != other.dtype()) return false;
    // Bitwise, so that -0.0 and 0.0 are distinguished.
    return payload_bytes() == other.payload_bytes();
}

// ---------------------------------------------------------------------------
// Checkpoint

void Checkpoint::add(Tensor tensor) {
    std::string name = tensor.name();
    auto [it, inserted] = tensors.emplace(name, std::move(tensor));
    if (!inserted) throw Error(ErrorCode::DuplicateName, "tensor '" + name + "' already present");
}

const Tensor* Checkpoint::find(std::string_view name) const {
    auto it = tensors.find(name);
    return it == tensors.end() ? nullptr : &it->second;
}

// ---------------------------------------------------------------------------
// CheckpointReader

CheckpointReader::CheckpointReader(std::filesystem::path path) : path_(std::move(path)) {
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path_.string());

    std::error_code ec;
    file_size_ = std::filesystem::file_size(path_, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot stat " + path_.string());
    if (file_size_ < 8) throw Error(ErrorCode::MalformedHeader, "file shorter than the 8-byte length prefix");

    char prefix[8];
    if (!in.read(prefix, 8)) throw Error(ErrorCode::IoFailure, "cannot read " + path_.string());
    const auto header_len = load_le<std::uint64_t>(prefix);
    if (header_len > file_size_ - 8) {
        throw Error(ErrorCode::MalformedHeader, "header length " + std::to_string(header_len) + " exceeds file size");
    }
    std::string header(static_cast<std::size_t>(header_len), '\0');
    if (!in.read(header.data(), static_cast<std::streamsize>(header_len))) {
        throw Error(ErrorCode::IoFailure, "cannot read header of " + path_.string());
    }
    payload_offset_ = 8 + header_len;

    // nlohmann keeps the last of duplicate keys, so duplicates are caught while parsing.
    std::set<std::string> seen;
    std::string duplicate;
    json::parser_callback_t on_event = [&](int depth, json::parse_event_t event, json& parsed) {
        if (event == json::parse_event_t::key && depth == 1) {
            auto key = parsed.get<std::string>();
            if (!seen.insert(key).second && duplicate.empty()) duplicate = key;
        }
        return true;
    };
    json doc;
    try {
        doc = json::parse(header, on_event);
    } catch (const json::exception& e) {
        throw Error(ErrorCode::MalformedHeader, std::string("invalid JSON header: ") + e.what());
    }
    if (!duplicate.empty()) throw Error(ErrorCode::DuplicateName, "tensor '" + duplicate + "' declared twice");
    if (!doc.is_object()) throw Error(ErrorCode::MalformedHeader, "header is not a JSON object");

    for (const auto& [name, spec] : doc.items()) {
        if (name == "__metadata__") continue;  // free-form metadata some writers emit
        entries_.push_back(parse_entry(name, spec));
    }
    std::sort(entries_.begin(), entries_.end(), [](const TensorEntry& a, const TensorEntry& b) {
        return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
    });

    const std::uint64_t payload_size = file_size_ - payload_offset_;
    std::uint64_t cursor = 0;
    for (const auto& entry : entries_) {
        if (entry.begin < cursor) throw Error(ErrorCode::MalformedHeader, "region of '" + entry.name + "' overlaps");
        if (entry.begin > cursor) throw Error(ErrorCode::MalformedHeader, "gap before region of '" + entry.name + "'");
        if (entry.end > payload_size) {
            throw Error(ErrorCode::MalformedHeader, "region of '" + entry.name + "' runs past end of file");
        }
        cursor = entry.end;
    }
    if (cursor != payload_size) {
        throw Error(ErrorCode::MalformedHeader, std::to_string(payload_size - cursor) + " trailing payload bytes");
    }

    for (std::size_t i = 0; i < entries_.size(); ++i) by_name_.emplace(entries_[i].name, i);
}

const TensorEntry* CheckpointReader::find(std::string_view name) const {
    auto it = by_name_.find(name);
    return it == by_name_.end() ? nullptr : &entries_[it->second];
}

CheckpointReader::Cursor::Cursor(const CheckpointReader& reader, const TensorEntry& entry)
    : entry_(&entry), in_(reader.path(), std::ios::binary), remaining_(entry.shape.numel()) {
    if (!in_) throw Error(ErrorCode::IoFailure, "cannot open " + reader.path().string());
    in_.seekg(static_cast<std::streamoff>(reader.payload_offset() + entry.begin));
    if (!in_) throw Error(ErrorCode::IoFailure, "cannot seek in " + reader.path().string());
}

std::size_t CheckpointReader::Cursor::read(std::span<double> out) {
    const std::size_t width = dtype_size(entry_->dtype);
    const std::size_t total = std::min(out.size(), remaining_);
    std::size_t done = 0;
    while (done < total) {
        const std::size_t count = std::min(total - done, kReadBlockElements);
        raw_.resize(count * width);
        if (!in_.read(raw_.data(), static_cast<std::streamsize>(raw_.size()))) {
            throw Error(ErrorCode::IoFailure, "short read in tensor '" + entry_->name + "'");
        }
        for (std::size_t i = 0; i < count; ++i) {
            const char* src = raw_.data() + i * width;
            const double value = entry_->dtype == Dtype::F32 ? static_cast<double>(load_le<float>(src))
                                                             : load_le<double>(src);
            if (!std::isfinite(value)) throw Error(ErrorCode::NonFiniteValue, "tensor '" + entry_->name + "'");
            out[done + i] = value;
        }
        done += count;
    }
    remaining_ -= total;
    return total;
}

// ---------------------------------------------------------------------------
// Writing

std::string encode_header(std::vector<TensorDecl> decls) {
    std::sort(decls.begin(), decls.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    json header = json::object();
    std::uint64_t offset = 0;
    for (const auto& decl : decls) {
        const std::uint64_t bytes = decl.shape.numel() * dtype_size(decl.dtype);
        header[decl.name] = {
            {"dtype", dtype_tag(decl.dtype)},
            {"shape", {decl.shape.rows, decl.shape.cols}},
            {"data_offsets", {offset, offset + bytes}},
        };
        offset += bytes;
    }
    return header.dump();
}

CheckpointWriter::CheckpointWriter(const std::filesystem::path& path, std::vector<TensorDecl> decls)
    : path_(path), decls_(std::move(decls)) {
    std::set<std::string> names;
    for (const auto& decl : decls_) {
        if (decl.name.empty()) throw Error(ErrorCode::InvalidTensor, "tensor name is empty");
        if (decl.name == "__metadata__") throw Error(ErrorCode::InvalidTensor, "reserved tensor name __metadata__");
        if (decl.shape.rows == 0 || decl.shape.cols == 0) {
            throw Error(ErrorCode::InvalidTensor, "tensor '" + decl.name + "' has an empty dimension");
        }
        if (!names.insert(decl.name).second) throw Error(ErrorCode::DuplicateName, decl.name);
    }
    std::sort(decls_.begin(), decls_.end(), [](const auto& a, const auto& b) { return a.name < b.name; });

    out_.open(path_, std::ios::binary | std::ios::trunc);
    if (!out_) throw Error(ErrorCode::IoFailure, "cannot create " + path_.string());
    const std::string header = encode_header(decls_);
    char prefix[8];
    store_le<std::uint64_t>(header.size(), prefix);
    out_.write(prefix, 8);
    out_.write(header.data(), static_cast<std::streamsize>(header.size()));
    if (!out_) throw Error(ErrorCode::IoFailure, "cannot write " + path_.string());
}

void CheckpointWriter::write(std::span<const float> values) {
    write_raw(values.data(), values.size(), Dtype::F32);
}

void CheckpointWriter::write(std::span<const double> values) {
    write_raw(values.data(), values.size(), Dtype::F64);
}

void CheckpointWriter::write_raw(const void* data, std::size_t count, Dtype dtype) {
    if (finished_) throw Error(ErrorCode::InvalidArgument, "writer already finished");
    std::size_t offset = 0;
    std::vector<char> buffer;
    while (offset < count) {
        while (current_ < decls_.size() && written_in_current_ == decls_[current_].shape.numel()) {
            ++current_;
            written_in_current_ = 0;
        }
        if (current_ == decls_.size()) throw Error(ErrorCode::InvalidArgument, "more values than declared");
        const TensorDecl& decl = decls_[current_];
        if (decl.dtype != dtype) throw Error(ErrorCode::DtypeMismatch, "tensor '" + decl.name + "'");

        const std::size_t take = std::min(count - offset, decl.shape.numel() - written_in_current_);
        const std::size_t width = dtype_size(dtype);
        buffer.resize(take * width);
        for (std::size_t i = 0; i < take; ++i) {
            if (dtype == Dtype::F32) {
                const float v = static_cast<const float*>(data)[offset + i];
                if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "tensor '" + decl.name + "'");
                store_le<float>(v, buffer.data() + i * width);
            } else {
                const double v = static_cast<const double*>(data)[offset + i];
                if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "tensor '" + decl.name + "'");
                store_le<double>(v, buffer.data() + i * width);
            }
        }
        out_.write(buffer.data(), static_cast<std::streamsize>(buffer.size()));
        if (!out_) throw Error(ErrorCode::IoFailure, "cannot write " + path_.string());
        written_in_current_ += take;
        offset += take;
    }
}

void CheckpointWriter::finish() {
    if (finished_) return;
    while (current_ < decls_.size() && written_in_current_ == decls_[current_].shape.numel()) {
        ++current_;
        written_in_current_ = 0;
    }
    if (current_ != decls_.size()) {
        throw Error(ErrorCode::InvalidArgument, "tensor '" + decls_[current_].name + "' not fully written");
    }
    out_.flush();
    out_.close();
    if (out_.fail()) throw Error(ErrorCode::IoFailure, "cannot finalize " + path_.string());
    finished_ = true;
}

// ---------------------------------------------------------------------------

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    CheckpointReader reader(path);
    Checkpoint checkpoint;
    checkpoint.source_path = path.string();
    checkpoint.byte_size = reader.file_size();
    std::vector<double> widened;
    for (const auto& entry : reader.entries()) {
        auto cursor = reader.open(entry);
        widened.resize(entry.shape.numel());
        cursor.read(widened);
        if (entry.dtype == Dtype::F32) {
            std::vector<float> values(widened.begin(), widened.end());
            checkpoint.add(Tensor(entry.name, entry.shape, std::move(values)));
        } else {
            checkpoint.add(Tensor(entry.name, entry.shape, std::move(widened)));
            widened = {};
        }
    }
    return checkpoint;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    std::vector<TensorDecl> decls;
    for (const auto& [name, tensor] : checkpoint.tensors) decls.push_back({name, tensor.dtype(), tensor.shape()});
    CheckpointWriter writer(path, std::move(decls));
    for (const auto& [name, tensor] : checkpoint.tensors) {
        if (tensor.dtype() == Dtype::F32) {
            writer.write(tensor.f32());
        } else {
            writer.write(tensor.f64());
        }
    }
    writer.finish();
}

}  // namespace ckdrift
