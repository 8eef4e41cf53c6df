#pragma once

#include "ckdrift/tensor_io.hpp"

#include <sys/resource.h>
#include <sys/wait.h>
#include <fcntl.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace testing_support {

namespace fs = std::filesystem;

inline fs::path data_dir() { return CKDRIFT_TEST_DATA; }
inline fs::path cli_path() { return CKDRIFT_CLI; }

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "ckdrift") {
        std::string pattern = (fs::temp_directory_path() / (tag + "-XXXXXX")).string();
        if (::mkdtemp(pattern.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
        path_ = pattern;
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

inline void spit(const fs::path& path, const std::string& text) {
    std::ofstream(path, std::ios::binary) << text;
}

/// Hugging Face T5 tensor names for `layers` blocks per stack, plus the shared
/// embedding (which no default rule classifies).
inline std::vector<ckdrift::TensorDecl> t5_decls(std::size_t layers, std::size_t d_model, std::size_t d_ff,
                                                 ckdrift::Dtype dtype = ckdrift::Dtype::F32) {
    using ckdrift::Shape;
    std::vector<ckdrift::TensorDecl> decls;
    auto add = [&](std::string name, Shape shape) { decls.push_back({std::move(name), dtype, shape}); };
    for (std::size_t l = 0; l < layers; ++l) {
        const std::string enc = "encoder.block." + std::to_string(l) + ".layer.";
        const std::string dec = "decoder.block." + std::to_string(l) + ".layer.";
        for (const char* m : {"q", "k", "v", "o"}) {
            add(enc + "0.SelfAttention." + m + ".weight", {d_model, d_model});
            add(dec + "0.SelfAttention." + m + ".weight", {d_model, d_model});
            add(dec + "1.EncDecAttention." + m + ".weight", {d_model, d_model});
        }
        add(enc + "1.DenseReluDense.wi.weight", {d_ff, d_model});
        add(enc + "1.DenseReluDense.wo.weight", {d_model, d_ff});
        add(dec + "2.DenseReluDense.wi.weight", {d_ff, d_model});
        add(dec + "2.DenseReluDense.wo.weight", {d_model, d_ff});
    }
    add("shared.weight", {32, d_model});
    return decls;
}

/// Deterministic pseudo-random contents; `perturb(name)` returns the offset
/// added to every element of that tensor (0 for none).
inline ckdrift::Checkpoint synthetic_checkpoint(const std::vector<ckdrift::TensorDecl>& decls, std::uint64_t seed,
                                                const std::function<double(const std::string&)>& perturb = {}) {
    ckdrift::Checkpoint ckpt;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (const auto& decl : decls) {
        const double offset = perturb ? perturb(decl.name) : 0.0;
        if (decl.dtype == ckdrift::Dtype::F32) {
            std::vector<float> values(decl.shape.numel());
            for (auto& v : values) v = static_cast<float>(dist(rng) + offset);
            ckpt.add(ckdrift::Tensor(decl.name, decl.shape, std::move(values)));
        } else {
            std::vector<double> values(decl.shape.numel());
            for (auto& v : values) v = dist(rng) + offset;
            ckpt.add(ckdrift::Tensor(decl.name, decl.shape, std::move(values)));
        }
    }
    return ckpt;
}

struct ChildResult {
    int exit_code = -1;
    long max_rss_kib = 0;
    std::string stderr_text;
};

/// Runs `args` (args[0] is the program) with stdout discarded, capturing
/// stderr and the child's peak resident set size.
inline ChildResult run_child(const std::vector<std::string>& args, const std::vector<std::string>& env = {}) {
    const fs::path err_file = fs::temp_directory_path() / ("ckdrift-child-" + std::to_string(::getpid()) + ".err");
    const pid_t pid = ::fork();
    if (pid < 0) throw std::runtime_error("fork failed");
    if (pid == 0) {
        const int devnull = ::open("/dev/null", O_WRONLY);
        const int err = ::open(err_file.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0600);
        ::dup2(devnull, STDOUT_FILENO);
        ::dup2(err, STDERR_FILENO);
        for (const auto& kv : env) ::putenv(const_cast<char*>(kv.c_str()));
        std::vector<char*> argv;
        for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
        argv.push_back(nullptr);
        ::execv(argv[0], argv.data());
        ::_exit(127);
    }
    int status = 0;
    struct rusage usage {};
    if (::wait4(pid, &status, 0, &usage) != pid) throw std::runtime_error("wait4 failed");
    ChildResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    result.max_rss_kib = usage.ru_maxrss;
    result.stderr_text = slurp(err_file);
    std::error_code ec;
    fs::remove(err_file, ec);
    return result;
}

}  // namespace testing_support
