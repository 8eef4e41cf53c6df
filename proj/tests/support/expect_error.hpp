#pragma once

#include "ckdrift/error.hpp"

#include <gtest/gtest.h>

#include <ostream>

namespace ckdrift {
inline void PrintTo(ErrorCode code, std::ostream* os) { *os << to_string(code); }
}  // namespace ckdrift

#define EXPECT_CKDRIFT_ERROR(statement, expected_code)                          \
    do {                                                                        \
        try {                                                                   \
            statement;                                                          \
            ADD_FAILURE() << "expected " << ckdrift::to_string(expected_code);  \
        } catch (const ckdrift::Error& caught_error_) {                         \
            EXPECT_EQ(caught_error_.code(), expected_code) << caught_error_.what(); \
        }                                                                       \
    } while (false)
