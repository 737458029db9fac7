#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const std::string kCli = DETRAD_CLI_PATH;

struct Sandbox {
    fs::path dir;
    Sandbox() : dir(fs::temp_directory_path() / "detrad_cli_test") {
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Sandbox() { fs::remove_all(dir); }
    std::string at(const std::string& name) const { return (dir / name).string(); }
};

int run(const std::string& args, const std::string& log = "/dev/null") {
    std::string cmd = kCli + " " + args + " >" + log + " 2>&1";
    return std::system(cmd.c_str());
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("cli pipeline runs end to end and is deterministic") {
    Sandbox sb;
    REQUIRE(run("gen-net --rows 4 --cols 4 --out " + sb.at("net.json")) == 0);
    const std::string world_args =
        " --net " + sb.at("net.json") +
        " --pairs-total 6 --trajectories-per-pair 12 --min-pair-hops 4"
        " --candidate-pairs 4 --min-pair-count 12 --tau 0.3 --seed 9";
    REQUIRE(run("gen-world --out-dir " + sb.at("world") + world_args) == 0);
    REQUIRE(run("gen-world --out-dir " + sb.at("world2") + world_args) == 0);
    CHECK(slurp(sb.at("world/train.jsonl")) == slurp(sb.at("world2/train.jsonl")));
    CHECK(slurp(sb.at("world/manifest.json")) == slurp(sb.at("world2/manifest.json")));

    REQUIRE(run("train --net " + sb.at("net.json") + " --train " + sb.at("world/train.jsonl") +
                " --out " + sb.at("bundle.json") + " -d 6 --epochs 3 --quiet") == 0);
    REQUIRE(run("precompute --net " + sb.at("net.json") + " --bundle " + sb.at("bundle.json") +
                " --out " + sb.at("table.json") + " --table-k 8 --bundle-out " +
                sb.at("bundle2.json")) == 0);

    SUBCASE("score with lambda zero equals score with an all-zero table") {
        REQUIRE(run("score --net " + sb.at("net.json") + " --bundle " + sb.at("bundle.json") +
                    " --dataset " + sb.at("world/id_test.jsonl") + " --lambda 0 --out " +
                    sb.at("scores_nolambda.jsonl")) == 0);
        nlohmann::json zero = {{"K", 1}, {"seed", 0}, {"log_factor", std::vector<double>(16, 0.0)}};
        {
            std::ofstream out(sb.at("zero_table.json"));
            out << zero.dump() << "\n";
        }
        REQUIRE(run("score --net " + sb.at("net.json") + " --bundle " + sb.at("bundle.json") +
                    " --dataset " + sb.at("world/id_test.jsonl") + " --lambda 0.1 --table " +
                    sb.at("zero_table.json") + " --out " + sb.at("scores_zerotable.jsonl")) == 0);
        auto a = slurp(sb.at("scores_nolambda.jsonl"));
        auto b = slurp(sb.at("scores_zerotable.jsonl"));
        REQUIRE(!a.empty());
        // identical scores line by line (the scaling term differs only in the report)
        std::istringstream sa(a), sc(b);
        std::string la, lb;
        while (std::getline(sa, la) && std::getline(sc, lb)) {
            auto ja = nlohmann::json::parse(la);
            auto jb = nlohmann::json::parse(lb);
            CHECK(ja.at("score").get<double>() == jb.at("score").get<double>());
        }
    }
    SUBCASE("scoring a prefix costs less likelihood than the full path") {
        REQUIRE(run("score --net " + sb.at("net.json") + " --bundle " + sb.at("bundle2.json") +
                    " --dataset " + sb.at("world/id_test.jsonl") +
                    " --observed-ratio 0.5 --out " + sb.at("scores_half.jsonl")) == 0);
        REQUIRE(run("score --net " + sb.at("net.json") + " --bundle " + sb.at("bundle2.json") +
                    " --dataset " + sb.at("world/id_test.jsonl") + " --out " +
                    sb.at("scores_full.jsonl")) == 0);
        std::istringstream sh(slurp(sb.at("scores_half.jsonl")));
        std::istringstream sf(slurp(sb.at("scores_full.jsonl")));
        std::string lh, lf;
        int lines = 0;
        while (std::getline(sh, lh) && std::getline(sf, lf)) {
            auto jh = nlohmann::json::parse(lh);
            auto jf = nlohmann::json::parse(lf);
            CHECK(jh.at("terms").at("elbo").get<double>() <=
                  jf.at("terms").at("elbo").get<double>());
            ++lines;
        }
        CHECK(lines > 0);
    }
    SUBCASE("rerun of score is byte-identical") {
        std::string cmd = "score --net " + sb.at("net.json") + " --bundle " + sb.at("bundle2.json") +
                          " --dataset " + sb.at("world/id_detour.jsonl");
        REQUIRE(run(cmd + " --out " + sb.at("s1.jsonl")) == 0);
        REQUIRE(run(cmd + " --out " + sb.at("s2.jsonl")) == 0);
        CHECK(slurp(sb.at("s1.jsonl")) == slurp(sb.at("s2.jsonl")));
        CHECK(!slurp(sb.at("s1.jsonl")).empty());
    }
}

TEST_CASE("cli error handling") {
    Sandbox sb;
    SUBCASE("missing file names the path") {
        CHECK(run("train --net " + sb.at("absent.json") + " --train x --out y",
                  sb.at("log.txt")) != 0);
        CHECK(slurp(sb.at("log.txt")).find("absent.json") != std::string::npos);
    }
    SUBCASE("unknown config key is rejected") {
        {
            std::ofstream out(sb.at("bad.json"));
            out << R"({"lamda": 0.1})";
        }
        CHECK(run("gen-net --config " + sb.at("bad.json") + " --out " + sb.at("net.json"),
                  sb.at("log.txt")) != 0);
        CHECK(slurp(sb.at("log.txt")).find("unknown key") != std::string::npos);
    }
    SUBCASE("help lists flags with defaults for every command") {
        for (const char* cmd : {"gen-net", "gen-world", "inject", "split", "train", "precompute",
                                "score", "eval", "sweep"}) {
            REQUIRE(run(std::string(cmd) + " --help", sb.at("help.txt")) == 0);
            auto text = slurp(sb.at("help.txt"));
            CHECK(text.find("[default:") != std::string::npos);
        }
        // published defaults visible in train --help
        REQUIRE(run("train --help", sb.at("help.txt")) == 0);
        auto text = slurp(sb.at("help.txt"));
        CHECK(text.find("[default: 128]") != std::string::npos);
        CHECK(text.find("[default: 200]") != std::string::npos);
        CHECK(text.find("[default: 0.01]") != std::string::npos);
    }
}

TEST_CASE("cli inject and split compose with gen-world outputs") {
    Sandbox sb;
    REQUIRE(run("gen-net --rows 4 --cols 4 --out " + sb.at("net.json")) == 0);
    REQUIRE(run("gen-world --net " + sb.at("net.json") + " --out-dir " + sb.at("world") +
                " --pairs-total 6 --trajectories-per-pair 12 --min-pair-hops 4"
                " --candidate-pairs 4 --min-pair-count 12 --tau 0.3 --seed 9") == 0);
    REQUIRE(run("inject --net " + sb.at("net.json") + " --dataset " +
                sb.at("world/id_test.jsonl") + " --strategy detour --strict --out " +
                sb.at("detours.jsonl") + " --detour-band-lo 0.05") == 0);
    CHECK(!slurp(sb.at("detours.jsonl")).empty());
    REQUIRE(run("split --dataset " + sb.at("world/train.jsonl") + " --out-dir " +
                sb.at("resplit") + " --candidate-pairs 2 --min-pair-count 3 --seed 4") == 0);
    CHECK(fs::exists(sb.at("resplit/train.jsonl")));
    CHECK(fs::exists(sb.at("resplit/manifest.json")));
}
