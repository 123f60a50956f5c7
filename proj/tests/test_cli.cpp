#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cour/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "cour_cli_test";

struct Result {
    int code = -1;
    std::string out;
};

Result cli(const std::string& args) {
    const fs::path out = kDir / "stdout.txt";
    std::string cmd = std::string(COUR_CLI) + " " + args + " > " + out.string() + " 2> " + (kDir / "stderr.txt").string();
    int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out);
    std::stringstream ss;
    ss << in.rdbuf();
    r.out = ss.str();
    return r;
}

std::string write(const std::string& name, const std::string& text) {
    fs::path p = kDir / name;
    std::ofstream(p) << text;
    return p.string();
}

const char* kSmall =
    R"({"env": "grid-reach", "seed": 3, "eval_seeds": 2, "cuq": {"n_samples": 3},
        "bdo": {"total_budget": 15, "min_evals": 2, "cem": {"iters": 4, "pop": 8}}})";

}  // namespace

TEST_CASE("command line") {
    fs::remove_all(kDir);
    fs::create_directories(kDir);
    const std::string cfg = write("small.json", kSmall);
    const std::string out = (kDir / "out").string();

    auto run = cli("run --config " + cfg + " --offline --out " + out);
    REQUIRE(run.code == 0);
    CHECK(run.out.find("final fitness") != std::string::npos);
    const std::string report = out + "/grid-reach_cour_3.json";
    REQUIRE(fs::exists(report));
    CHECK(cli("validate " + report).code == 0);

    auto doc = cour::pipeline::read_json(report);
    doc["validation"]["per_seed"][0] = 0.123;
    cour::pipeline::write_json((kDir / "tampered.json").string(), doc);
    CHECK(cli("validate " + (kDir / "tampered.json").string()).code == 4);

    auto again = cli("run --config " + cfg + " --offline --seed 9 --mode monolithic-bo --out " + out);
    CHECK(again.code == 0);
    CHECK(fs::exists(out + "/grid-reach_monolithic-bo_9.json"));

    auto gen = cli("generate --config " + cfg + " --offline");
    CHECK(gen.code == 0);
    CHECK(gen.out.find("combine") != std::string::npos);
    auto unc = cli("uncertainty --config " + cfg + " --offline");
    CHECK(unc.code == 0);
    CHECK(unc.out.find("s_text") != std::string::npos);

    const std::string reward = write("reward.dsl",
                                     "term progress aspect progress {\n  hyper c in [0.01, 1] default 0.5;\n"
                                     "  expr = -c * state.dist;\n}\ncombine = 1 * progress;\n");
    auto opt = cli("optimize " + reward + " --config " + cfg + " --offline");
    CHECK(opt.code == 0);
    CHECK(opt.out.find("15 evaluations") != std::string::npos);

    CHECK(cli("run --offline --env grid-reach").code == 2);
    CHECK(cli("run --config " + cfg + " --offline --mode telepathy").code == 2);
    CHECK(cli("run --config " + write("bad.json", R"({"seed": 1, "colour": "red"})")).code == 2);
    CHECK(cli("run --no-such-flag").code == 2);
    CHECK(cli("ablate --config " + cfg + " --offline --modes cour").code == 2);
    CHECK(cli("ablate --config " + cfg + " --offline --modes cour,no-cuq --seeds 2").code == 2);

    const std::string http = write("http.json", R"({"seed": 1, "env": "grid-reach",
        "provider": {"kind": "http", "endpoint": "http://127.0.0.1:9/v1/chat", "model": "m",
                     "timeout_s": 1, "max_retries": 0}})");
    CHECK(cli("run --config " + http + " --out " + out).code == 3);
    CHECK(cli("run --config " + http + " --offline").code == 0);

    const std::string lib = (kDir / "lib.jsonl").string();
    const std::string with_lib = write("lib.json", std::string(kSmall).insert(1, "\"library\": {\"path\": \"" + lib + "\"}, "));
    REQUIRE(cli("run --config " + with_lib + " --offline").code == 0);
    auto listing = cli("library --path " + lib);
    CHECK(listing.code == 0);
    CHECK(listing.out.find("2 records") != std::string::npos);
    auto hit = cli("library --path " + lib + " --aspect progress --query " + reward + " --k 1");
    CHECK(hit.code == 0);
    CHECK(hit.out.find("progress") != std::string::npos);
}
