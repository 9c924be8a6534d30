// Writes the sample inputs under data/: a toy transaction log, a synthetic
// transaction log with known truth, its proxy matrix, and one config per
// command.
#include "csd/io.hpp"
#include "csd/synthetic.hpp"

#include <json.hpp>

#include <filesystem>
#include <iostream>

namespace {

using namespace csd;
using nlohmann::json;

estimate::SaleRecord line(const std::string& tx, const std::string& product, double qty) {
    estimate::SaleRecord r;
    r.transaction_id = tx;
    r.store_id = "s1";
    r.date = "2024-01-15";
    r.product_id = product;
    r.quantity = qty;
    r.unit_price = 1.0;
    r.gross_value = qty;
    r.category_l1 = "food";
    r.category_l2 = "grocery";
    r.category_l3 = product;
    return r;
}

// The three-good milk/bacon/pasta example, one transaction per basket.
std::vector<estimate::SaleRecord> toy_records() {
    const char* goods[] = {"milk", "bacon", "pasta"};
    const double a[3][4] = {{2, 0, 1, 2}, {2, 2, 2, 4}, {0, 2, 1, 2}};
    const char* tx[] = {"breakfast", "dinner", "weekly1", "weekly2"};
    std::vector<estimate::SaleRecord> out;
    for (int j = 0; j < 4; ++j)
        for (int k = 0; k < 3; ++k)
            if (a[k][j] > 0) out.push_back(line(tx[j], goods[k], a[k][j]));
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    namespace fs = std::filesystem;
    const fs::path dir = argc > 1 ? fs::path(argv[1]) : fs::path("data");
    const std::uint64_t seed = argc > 2 ? std::stoull(argv[2]) : 7;
    try {
        fs::create_directories(dir);
        auto write = [&](const std::string& name, const std::string& s) { io::write_atomic((dir / name).string(), s); };
        auto write_json = [&](const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); };

        write("toy_transactions.csv", estimate::sales_csv(toy_records()));

        synthetic::MarketSpec spec;
        spec.stores = 8;
        spec.quarters = 8;
        spec.transactions = 300.0;
        const synthetic::SyntheticMarket m = synthetic::synthetic_market(spec, seed);
        write("fixture_transactions.csv", estimate::sales_csv(synthetic::synthetic_sales(m, 40.0, seed)));
        write("fixture_w.csv", io::dense_csv(m.w, m.panel.goods, ""));

        write_json("estimate.json", {{"transactions", "fixture_transactions.csv"},
                                     {"proxy_path", "fixture_w.csv"},
                                     {"variance_target", 1.0},
                                     {"truth_phi", spec.phi}});
        write_json("proxy.json", {{"transactions", "fixture_transactions.csv"}, {"alpha_c", 0.01}, {"alpha_l", 0.01}});
        write_json("proxy_toy.json", {{"transactions", "toy_transactions.csv"}});
        write_json("screen.json", {{"transactions", "fixture_transactions.csv"}, {"confidence", 0.95}, {"threshold", 0.001}});
        write_json("counterfactual.json", {{"ownership", "bertrand"}, {"stockouts", {"milk", "bacon", "pasta"}}});
        write_json("simulate.json", {{"n_draws", 1000}, {"firm_pricing", "linear_foc"}});
        std::cout << "wrote fixtures to " << dir.string() << " (" << m.panel.rows() << " panel rows, truth phi "
                  << spec.phi << ")\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
