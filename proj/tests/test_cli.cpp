#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(TP_CLI) + " " + args + " >/dev/null 2>&1";
    const int st = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(st));
    return WEXITSTATUS(st);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("tensorpool_cli_" + name);
    fs::remove_all(p);
    return p;
}

const std::string kSrc = TP_SOURCE_DIR;

}  // namespace

TEST_CASE("cli rejects bad input with exit code 2") {
    const fs::path dir = scratch("bad");
    CHECK(run("simulate --config " + kSrc + "/tests/data/bad_config.json --workload " + kSrc
              + "/configs/workloads/relu.json --out-dir " + dir.string())
          == 2);
    fs::create_directories(dir);
    std::ofstream(dir / "broken.json") << "{ not json";
    CHECK(run("simulate --workload " + (dir / "broken.json").string() + " --out-dir " + dir.string()) == 2);
    CHECK(run("simulate") == 2);
    CHECK(run("frobnicate") == 2);
    CHECK(run("analyze --convention ops") == 2);
}

TEST_CASE("cli empty sweep writes only the header") {
    const fs::path dir = scratch("empty");
    CHECK(run("sweep --sweep " + kSrc + "/configs/sweeps/empty.json --out-dir " + dir.string()) == 0);
    CHECK(slurp(dir / "sweep.csv") == "size,repetition,seed\n");
    CHECK(fs::exists(dir / "run.log"));
}

TEST_CASE("cli simulate is deterministic for a fixed seed") {
    const fs::path a = scratch("det_a");
    const fs::path b = scratch("det_b");
    const std::string wl = kSrc + "/configs/workloads/relu.json";
    REQUIRE(run("simulate --workload " + wl + " --seed 5 --trace --dump-l1 --out-dir " + a.string()) == 0);
    REQUIRE(run("simulate --workload " + wl + " --seed 5 --trace --dump-l1 --out-dir " + b.string()) == 0);
    for (const char* f : {"report.json", "trace.csv", "l1.bin"}) {
        INFO(f);
        CHECK(slurp(a / f) == slurp(b / f));
    }
    CHECK(slurp(a / "report.json").find("\"seed\": 5") != std::string::npos);
    CHECK(fs::file_size(a / "l1.bin") == 4u * 1024 * 1024);
}

TEST_CASE("cli analyze writes analysis.json") {
    const fs::path dir = scratch("analyze");
    CHECK(run("analyze --channel --out-dir " + dir.string()) == 0);
    CHECK(slurp(dir / "analysis.json").find("\"bisection_wires\"") != std::string::npos);
}
