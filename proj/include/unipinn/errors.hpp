#pragma once
#include <stdexcept>
#include <string>

namespace unipinn {

// Configuration contradicts itself or the requested mode (e.g. seeding the
// time direction while running in steady mode).
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Tensor/vector dimensions do not line up.
class shape_error : public std::runtime_error {
public:
    explicit shape_error(const std::string& what) : std::runtime_error(what) {}
};

// A value left the representable/meaningful range (NaN, overflow, divergence).
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

// Malformed external input (CSV, checkpoint, config file).
class parse_error : public std::runtime_error {
public:
    explicit parse_error(const std::string& what) : std::runtime_error(what) {}
};

// Recorded computation no longer matches its tape (e.g. parameters mutated
// between the forward record and the reverse sweep).
class consistency_error : public std::runtime_error {
public:
    explicit consistency_error(const std::string& what) : std::runtime_error(what) {}
};

namespace log {
inline void warn(const std::string& msg);
}

} // namespace unipinn

#include <iostream>
#include <mutex>

namespace unipinn::log {
inline void warn(const std::string& msg) {
    static std::mutex m;
    std::lock_guard<std::mutex> lock(m);
    std::cerr << "[unipinn] warning: " << msg << "\n";
}
} // namespace unipinn::log
