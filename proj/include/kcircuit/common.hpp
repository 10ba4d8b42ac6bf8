#pragma once

#include <cstddef>
#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace kc {

using Matrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::Matrix<float, 1, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

using TokenId = std::int32_t;
using Tokens = std::vector<TokenId>;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
    if (!cond) {
        throw Error(what);
    }
}

// Warnings are collected by callers that want them; the default sink is stderr.
struct WarningSink {
    std::vector<std::string> messages;
    bool echo = true;

    void warn(const std::string& msg) {
        if (echo) {
            std::cerr << "warning: " << msg << "\n";
        }
        messages.push_back(msg);
    }
};

}  // namespace kc
