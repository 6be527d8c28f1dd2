#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "pi/pi.h"

namespace {

const std::filesystem::path fixtures = PI_FIXTURE_DIR;

struct Session {
    pi_session* s = nullptr;
    Session() { REQUIRE(pi_session_create(&s) == PI_OK); }
    ~Session() { pi_session_destroy(s); }
};

std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("pi_capi_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

bool contains(const char* hay, const char* needle) { return std::strstr(hay, needle) != nullptr; }

}  // namespace

TEST_CASE("version and null handling") {
    CHECK(std::string(pi_version()) == "pi-clip 0.1.0");
    CHECK(pi_session_create(nullptr) == PI_ERR_USAGE);
    CHECK(pi_set_seed(nullptr, 1) == PI_ERR_USAGE);
    CHECK(std::string(pi_last_error(nullptr)) == "null session");
    pi_session_destroy(nullptr);
}

TEST_CASE("usage errors") {
    Session s;
    CHECK(pi_train(s.s, "posthoc", nullptr, nullptr, "/tmp/pi_capi_unused") == PI_ERR_USAGE);
    CHECK(contains(pi_last_error(s.s), "--init"));
    CHECK(pi_gen_data(s.s, nullptr) == PI_ERR_USAGE);
    CHECK(pi_compare(s.s, "") == PI_ERR_USAGE);
    CHECK(pi_report(s.s, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr) == PI_ERR_USAGE);
    CHECK(pi_config_text(s.s, nullptr) == PI_ERR_USAGE);
}

TEST_CASE("validation and runtime errors") {
    Session s;
    const auto dir = scratch("errors");
    {
        std::ofstream(dir / "bad.ini") << "[stage1]\nepochs = -1\n";
    }
    CHECK(pi_load_config(s.s, (dir / "bad.ini").string().c_str()) == PI_ERR_VALIDATION);
    CHECK(contains(pi_last_error(s.s), "epochs"));
    CHECK(pi_train(s.s, "stage3", nullptr, nullptr, (dir / "run").string().c_str()) == PI_ERR_VALIDATION);
    CHECK(pi_load_config(s.s, (dir / "missing.ini").string().c_str()) == PI_ERR_RUNTIME);
    CHECK(pi_eval(s.s, (dir / "missing.pickpt").string().c_str(), "run", nullptr, (dir / "e.csv").string().c_str()) ==
          PI_ERR_RUNTIME);
    CHECK(pi_report(s.s, (fixtures / "table1.csv").string().c_str(), nullptr, "ours", "nobody", nullptr, nullptr) ==
          PI_ERR_VALIDATION);
    CHECK(std::string(pi_last_error(s.s)).size() > 0);
    CHECK(pi_load_config(s.s, nullptr) == PI_OK);
    CHECK(std::string(pi_last_error(s.s)).empty());
}

TEST_CASE("config text reflects seed and round-trips") {
    Session s;
    const auto dir = scratch("config");
    REQUIRE(pi_set_seed(s.s, 42) == PI_OK);
    const char* text = nullptr;
    REQUIRE(pi_config_text(s.s, &text) == PI_OK);
    CHECK(contains(text, "seed = 42"));
    {
        std::ofstream(dir / "c.ini") << text;
    }
    Session t;
    REQUIRE(pi_load_config(t.s, (dir / "c.ini").string().c_str()) == PI_OK);
    const char* again = nullptr;
    REQUIRE(pi_config_text(t.s, &again) == PI_OK);
    CHECK(std::string(again) == std::string(text));
}

TEST_CASE("report text from fixtures") {
    Session s;
    const auto dir = scratch("report");
    const auto out = dir / "r.md";
    REQUIRE(pi_report(s.s, (fixtures / "table1.csv").string().c_str(), nullptr, "ours", "baseline", nullptr,
                      out.string().c_str()) == PI_OK);
    const std::string text = pi_report_text(s.s);
    CHECK(text.find("| ImageNet-1k | 18.9 | 15.1 | +3.8 | 39.0 | 33.3 | +5.7 |") != std::string::npos);
    CHECK(text.find("23 of 29") != std::string::npos);
    std::ifstream in(out);
    const std::string file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(file == text);
}
