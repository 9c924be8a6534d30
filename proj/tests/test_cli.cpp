#include "doctest.h"

#include "cli.hpp"
#include "csd/io.hpp"
#include "support.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <sstream>

using namespace csd;
using namespace csd::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kData = CSD_DATA_DIR;

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("csd_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

int run(std::vector<std::string> args) {
    args.insert(args.begin(), "csdemand");
    return cli::run(args);
}

json load_json(const fs::path& p) { return json::parse(io::read_file(p.string())); }

// CSV with "#" lines skipped.
io::CsvTable load_csv(const fs::path& p) {
    std::istringstream in(io::read_file(p.string()));
    std::string line, body;
    while (std::getline(in, line))
        if (line.empty() || line[0] != '#') body += line + "\n";
    return io::parse_csv(body);
}

std::string first_line(const fs::path& p) {
    std::istringstream in(io::read_file(p.string()));
    std::string line;
    std::getline(in, line);
    return line;
}

std::vector<double> doubles(const json& a) {
    std::vector<double> v;
    for (const auto& x : a) v.push_back(x.get<double>());
    return v;
}

}  // namespace

TEST_CASE("proxy on the toy log reproduces the BiCM expectation") {
    const fs::path out = scratch("toy");
    REQUIRE(run({"proxy", "--config", (kData / "proxy_toy.json").string(), "--out", out.string()}) == 0);
    const io::CsvTable mu = load_csv(out / "mu.csv");
    REQUIRE(mu.rows.size() == 3);
    CHECK(mu.rows[0][0] == "milk");
    CHECK(mu.header[2] == "bacon");
    CHECK(std::stod(mu.rows[0][2]) == doctest::Approx(1.44).epsilon(1e-12));
    const json s = load_json(out / "proxy_summary.json");
    CHECK(s["products"] == 3);
    CHECK(s["transactions"] == 4);
}

TEST_CASE("estimate on the fixture recovers phi and is reproducible") {
    const fs::path a = scratch("est_a"), b = scratch("est_b");
    const std::string cfg = (kData / "estimate.json").string();
    REQUIRE(run({"estimate", "--config", cfg, "--out", a.string()}) == 0);
    REQUIRE(run({"estimate", "--config", cfg, "--out", b.string()}) == 0);

    for (const auto& f : fs::directory_iterator(a))
        CHECK_MESSAGE(io::read_file(f.path().string()) == io::read_file((b / f.path().filename()).string()),
                      f.path().filename().string());

    const json d = load_json(a / "diagnostics.json");
    for (const char* fit : {"base", "nn_corrected"}) {
        const json& f = d[fit];
        for (const char* key : {"adj_r2", "r2", "wald_f", "wald_df", "wald_p", "dwh_chi2", "dwh_df", "dwh_p",
                                "first_stage_min_f", "n_obs", "n_params", "n_clusters", "n_instruments",
                                "n_components_kept", "top_share", "phi_bar", "phi_bar_se", "alpha", "rounds",
                                "converged"})
            CHECK_MESSAGE(f.contains(key), fit << "." << key);
        const double phi = f["phi_bar"].get<double>(), se = f["phi_bar_se"].get<double>();
        CHECK(se > 0.0);
        CHECK(std::abs(phi - (-0.4)) <= 3.0 * se);
    }
    CHECK(d["base"]["n_obs"] == 1024);

    // Every file carries the same config hash.
    const std::string hash = d["config_sha256"].get<std::string>();
    CHECK(hash.size() == 64);
    CHECK(load_json(a / "fit_nn.json")["config_sha256"] == hash);
    CHECK(first_line(a / "markups.csv") == io::provenance_line(hash).substr(0, io::provenance_line(hash).size() - 1));

    // Revenue weights sum to one within each quarter.
    const io::CsvTable mk = load_csv(a / "markups.csv");
    REQUIRE(mk.rows.size() == 1024);
    REQUIRE(mk.header.size() == 11);
    std::map<std::string, double> by_quarter;
    for (const auto& r : mk.rows) {
        by_quarter[r[2]] += std::stod(r[9]);
        if (r[10] == "0") CHECK(std::stod(r[8]) > 0.0);
    }
    CHECK(by_quarter.size() == 8);
    for (const auto& [q, w] : by_quarter) CHECK_MESSAGE(w == doctest::Approx(1.0).epsilon(1e-9), q);

    CHECK(load_csv(a / "markup_means.csv").rows.size() == 8);
    CHECK(load_csv(a / "price_index.csv").rows.size() == 64);
    CHECK(load_csv(a / "store_markups.csv").rows.size() == 8);
}

TEST_CASE("relative paths resolve against the config file, not the working directory") {
    const fs::path dir = scratch("rel");
    fs::copy_file(kData / "toy_transactions.csv", dir / "log.csv");
    io::write_atomic((dir / "cfg.json").string(), R"({"transactions": "log.csv"})");
    const fs::path cwd = fs::current_path();
    fs::current_path(fs::temp_directory_path());
    const int code = run({"screen", "--config", (dir / "cfg.json").string(), "--out", (dir / "out").string()});
    fs::current_path(cwd);
    REQUIRE(code == 0);
    const io::CsvTable s = load_csv(dir / "out" / "singleton_screen.csv");
    CHECK(s.rows.size() == 3);
    for (const auto& r : s.rows) CHECK(r[2] == "0");
}

TEST_CASE("counterfactual: monopoly closed form and stock-out ratio") {
    const fs::path out = scratch("cf");
    REQUIRE(run({"counterfactual", "--set", "ownership=\"monopoly\"", "--set", "stockouts=[\"milk\",\"bacon\"]",
                 "--out", out.string()}) == 0);
    const json j = load_json(out / "counterfactual.json");

    // q* = Sigma delta / 2 with Sigma = A (A'MA)^+ A'.
    const Matrix a = toy_baskets();
    const Matrix m = 0.1 * Matrix::Ones(3, 3) + 0.9 * Matrix::Identity(3, 3);
    const Matrix inner = a.transpose() * m * a;
    const Matrix sigma = a * inner.completeOrthogonalDecomposition().pseudoInverse() * a.transpose();
    const Vector q = sigma * Vector::Constant(3, 2.0) / 2.0;
    const auto got = doubles(j["equilibrium"]["quantities"]);
    for (int i = 0; i < 3; ++i) CHECK(got[static_cast<std::size_t>(i)] == doctest::Approx(q(i)).epsilon(1e-9));

    for (const auto& s : j["stockouts"]) {
        CHECK(s["ratio_holds"] == true);
        CHECK(s["ratio_dcs_dprofit"].get<double>() == doctest::Approx(0.15).epsilon(1e-9));
    }
}

TEST_CASE("counterfactual: one firm per good matches bertrand") {
    const fs::path out = scratch("cf_firms");
    REQUIRE(run({"counterfactual", "--set", "ownership=[0,1,2]", "--out", out.string()}) == 0);
    const json j = load_json(out / "counterfactual.json");
    const auto p = doubles(j["equilibrium"]["prices"]), pb = doubles(j["bertrand"]["prices"]);
    for (std::size_t i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(pb[i]).epsilon(1e-9));
}

TEST_CASE("simulate writes table files and honours the seed flag") {
    const fs::path a = scratch("sim_a"), b = scratch("sim_b"), c = scratch("sim_c");
    REQUIRE(run({"simulate", "--set", "n_draws=20", "--seed", "5", "--out", a.string()}) == 0);
    REQUIRE(run({"simulate", "--set", "n_draws=20", "--seed", "5", "--out", b.string()}) == 0);
    REQUIRE(run({"simulate", "--set", "n_draws=20", "--seed", "6", "--out", c.string()}) == 0);
    CHECK(io::read_file((a / "study.json").string()) == io::read_file((b / "study.json").string()));
    CHECK(io::read_file((a / "study.csv").string()) == io::read_file((b / "study.csv").string()));
    CHECK(load_json(a / "study.json")["config_sha256"] !=
          load_json(c / "study.json")["config_sha256"]);
    CHECK(load_csv(a / "study.csv").rows.size() >= 12);
}

TEST_CASE("usage, config and data errors exit with 1") {
    const fs::path out = scratch("err");
    const fs::path empty = out / "empty.csv";
    io::write_atomic(empty.string(), "");
    const fs::path bad = out / "bad.json";
    io::write_atomic(bad.string(), "{\"n_draws\": ");

    CHECK(run({"simulate", "--set", "n_draws=0", "--out", out.string()}) == 1);
    CHECK(run({"simulate", "--set", "n_draws=\"many\"", "--out", out.string()}) == 1);
    CHECK(run({"simulate", "--config", bad.string(), "--out", out.string()}) == 1);
    CHECK(run({"proxy", "--set", "transactions=" + empty.string(), "--out", out.string()}) == 1);
    CHECK(run({"screen", "--set", "transactions=" + (out / "absent.csv").string(), "--out", out.string()}) == 1);
    CHECK(run({"screen", "--out", out.string()}) == 1);
    CHECK(run({"estimate", "--config", (kData / "estimate.json").string(), "--set", "colour=1", "--out", out.string()}) == 1);
    CHECK(run({"counterfactual", "--set", "stockouts=[\"eggs\"]", "--out", out.string()}) == 1);
    CHECK(run({"counterfactual", "--set", "phi=0.5", "--out", out.string()}) == 1);
    CHECK(run({"frobnicate"}) == 1);
    CHECK(run({"simulate", "--config", (out / "nope.json").string()}) == 1);
    CHECK(run({"--help"}) == 0);
}
