#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <string>

// Fresh scratch directory per test, under the build tree's temp area.
inline std::filesystem::path test_dir(const std::string& suite) {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    auto dir = std::filesystem::temp_directory_path() / "stgnp_tests" / suite / info->name();
    static std::string last;
    if (last != dir.string()) {
        std::filesystem::remove_all(dir);
        last = dir.string();
    }
    std::filesystem::create_directories(dir);
    return dir;
}
