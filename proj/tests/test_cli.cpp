#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "bnt/data.hpp"
#include "bnt/metrics.hpp"
#include "bnt/training.hpp"

namespace fs = std::filesystem;
using namespace bnt;

namespace {

struct Result {
    int code = -1;
    std::string output;
};

const fs::path& workdir() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / ("bnt_cli_test_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Runs the CLI inside the work directory, capturing stdout and stderr.
Result bnt_run(const std::string& args, const std::string& env = "") {
    const fs::path log = workdir() / "last_output.txt";
    const std::string cmd = "cd '" + workdir().string() + "' && " + env + " '" BNT_CLI_PATH "' " + args + " > '" +
                            log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    Result r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.output = slurp(log);
    return r;
}

fs::path at(const std::string& name) { return workdir() / name; }

std::map<std::string, std::string> report_values(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        const auto eq = line.find(" = ");
        if (eq != std::string::npos && line.rfind("epoch ", 0) != 0) out[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return out;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> cells;
        std::stringstream ls(line);
        for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
        rows.push_back(cells);
    }
    return rows;
}

const std::string kSmallData = "--nodes 8 --modules 2 --subjects-per-class 24 --sites 2 --series-length 64";
const std::string kSmallModel = "--layers 1 --heads 2 --clusters 3 --mlp-hidden 16,8 --epochs 4 --batch-size 16 --lr 1e-3";

void make_small(const std::string& data, const std::string& split) {
    if (!fs::exists(at(data))) REQUIRE(bnt_run("generate --out " + data + " " + kSmallData + " --seed 5").code == 0);
    if (!fs::exists(at(split)))
        REQUIRE(bnt_run("split --dataset " + data + " --out " + split + " --fractions 0.6,0.2,0.2 --seed 5").code == 0);
}

}  // namespace

TEST_CASE("generate with defaults writes 2 * subjects_per_class records and a manifest") {
    const auto r = bnt_run("generate --out default.bntd");
    REQUIRE(r.code == 0);
    const auto graphs = read_dataset(at("default.bntd"));
    CHECK(graphs.size() == 400);
    CHECK(graphs[0].matrix.rows() == 32);
    const std::string manifest = slurp(at("default.bntd.manifest"));
    CHECK(manifest.find("; command = generate") != std::string::npos);
    CHECK(manifest.find("seed=42") != std::string::npos);
    CHECK(manifest.find("; duration_seconds = ") != std::string::npos);
}

TEST_CASE("generate is byte-identical per seed, honours BNT_SEED and never overwrites silently") {
    REQUIRE(bnt_run("generate --out g1.bntd " + kSmallData + " --seed 9").code == 0);
    REQUIRE(bnt_run("generate --out g2.bntd " + kSmallData + " --seed 9").code == 0);
    CHECK(slurp(at("g1.bntd")) == slurp(at("g2.bntd")));

    REQUIRE(bnt_run("generate --out g3.bntd " + kSmallData, "BNT_SEED=9").code == 0);
    CHECK(slurp(at("g3.bntd")) == slurp(at("g1.bntd")));

    const auto again = bnt_run("generate --out g1.bntd " + kSmallData + " --seed 10");
    CHECK(again.code == 2);
    CHECK(again.output.find("--force") != std::string::npos);
    CHECK(slurp(at("g1.bntd")) == slurp(at("g2.bntd")));
    CHECK(bnt_run("generate --out g1.bntd " + kSmallData + " --seed 10 --force").code == 0);
    CHECK(slurp(at("g1.bntd")) != slurp(at("g2.bntd")));
}

TEST_CASE("the manifest reproduces the run") {
    REQUIRE(bnt_run("generate --out m1.bntd " + kSmallData + " --seed 3 --within 0.8").code == 0);
    fs::copy_file(at("m1.bntd.manifest"), at("m1.ini"));
    REQUIRE(bnt_run("--config m1.ini generate --out m2.bntd").code == 0);
    CHECK(slurp(at("m1.bntd")) == slurp(at("m2.bntd")));
}

TEST_CASE("usage errors exit with 1 and name the flag") {
    const auto r = bnt_run("generate --out bad.bntd --nodes 8 --modules 9");
    CHECK(r.code == 1);
    CHECK(r.output.find("--modules") != std::string::npos);
    CHECK(!fs::exists(at("bad.bntd")));
    CHECK(bnt_run("no-such-command").code == 1);
    CHECK(bnt_run("").code == 1);
    CHECK(bnt_run("generate").code == 1);
}

TEST_CASE("split honours fractions, stratification and the no-stratify path") {
    make_small("s.bntd", "s.split");
    const auto graphs = read_dataset(at("s.bntd"));
    const auto plan = read_split(at("s.split"));
    CHECK(plan.stratified);
    std::map<std::pair<int, int>, std::array<double, 4>> cells;
    std::map<std::uint32_t, const ConnectivityGraph*> by_id;
    for (const auto& g : graphs) {
        by_id[g.subject_id] = &g;
        cells[{g.site, g.label}][3] += 1;
    }
    const std::vector<std::uint32_t>* parts[3] = {&plan.train, &plan.val, &plan.test};
    for (int s = 0; s < 3; ++s)
        for (auto id : *parts[s]) cells[{by_id[id]->site, by_id[id]->label}][s] += 1;
    const double f[3] = {0.6, 0.2, 0.2};
    for (const auto& [cell, c] : cells)
        for (int s = 0; s < 3; ++s) CHECK(std::abs(c[s] - f[s] * c[3]) <= 1.0);

    CHECK(bnt_run("split --dataset s.bntd --out bad.split --fractions 0.6,0.3,0.2").code == 1);
    REQUIRE(bnt_run("split --dataset s.bntd --out plain.split --no-stratify").code == 0);
    CHECK(!read_split(at("plain.split")).stratified);
    CHECK(bnt_run("split --dataset missing.bntd --out x.split").code == 2);
}

TEST_CASE("train, eval and export-assignments agree") {
    make_small("t.bntd", "t.split");
    REQUIRE(bnt_run("train --dataset t.bntd --split t.split --out run " + kSmallModel + " --seed 4").code == 0);
    for (const char* f : {"model.bntm", "report.txt", "metrics.csv", "manifest.ini"}) CHECK(fs::exists(at("run") / f));
    const auto report = report_values(slurp(at("run/report.txt")));
    CHECK(report.count("selected_epoch") == 1);

    REQUIRE(bnt_run("eval --checkpoint run/model.bntm --dataset t.bntd --split t.split --out run_eval.csv").code == 0);
    const auto rows = csv_rows(slurp(at("run_eval.csv")));
    REQUIRE(rows.size() == 2);
    CHECK(rows[0] == std::vector<std::string>{"run_id", "seed", "auroc", "accuracy", "sensitivity", "specificity"});
    CHECK(rows[1][2] == report.at("test.auroc"));
    CHECK(rows[1][3] == report.at("test.accuracy"));
    CHECK(rows[1][4] == report.at("test.sensitivity"));
    CHECK(rows[1][5] == report.at("test.specificity"));

    CHECK(bnt_run("eval --checkpoint nope.bntm --dataset t.bntd --split t.split --out nope.csv").code == 2);

    REQUIRE(bnt_run("export-assignments --checkpoint run/model.bntm --dataset t.bntd --split t.split --out assign.csv").code == 0);
    const auto a = csv_rows(slurp(at("assign.csv")));
    REQUIRE(a.size() == 1 + 2 * 3 * 8);
    CHECK(a[0] == std::vector<std::string>{"class", "cluster", "node", "value", "difference_score"});
    Matrix p0(3, 8), p1(3, 8);
    for (std::size_t i = 1; i < a.size(); ++i) {
        Matrix& m = a[i][0] == "0" ? p0 : p1;
        m(std::stoul(a[i][1]), std::stoul(a[i][2])) = std::stod(a[i][3]);
    }
    CHECK(std::stod(a[1][4]) == difference_score(p0, p1));
}

TEST_CASE("train rejects a readout that eval cannot export") {
    make_small("t.bntd", "t.split");
    REQUIRE(bnt_run("train --dataset t.bntd --split t.split --out run_mean --readout mean " + kSmallModel).code == 0);
    CHECK(bnt_run("export-assignments --checkpoint run_mean/model.bntm --dataset t.bntd --split t.split --out x.csv").code == 1);
    CHECK(bnt_run("train --dataset t.bntd --split t.split --out run_bad --readout sortpool").code == 1);
    CHECK(bnt_run("train --dataset t.bntd --split t.split --out run_bad --clusters 9").code == 1);
}

TEST_CASE("training divergence is a numerical failure") {
    make_small("t.bntd", "t.split");
    const auto r = bnt_run("train --dataset t.bntd --split t.split --out run_nan --lr 1e300 --weight-decay 1e300 "
                           "--layers 1 --heads 2 --clusters 3 --mlp-hidden 16,8 --epochs 4");
    CHECK(r.code == 3);
}

TEST_CASE("eval aggregates runs with mean and population standard deviation") {
    const double auc[] = {0.8, 0.9, 0.85, 0.95, 0.7};
    std::string names;
    for (int i = 0; i < 5; ++i) {
        std::ofstream(at("agg" + std::to_string(i) + ".csv")) << "run_id,seed,auroc,accuracy,sensitivity,specificity\n"
                                                              << "r" << i << "," << i << "," << auc[i] << ",0.5,NA,1\n";
        names += " agg" + std::to_string(i) + ".csv";
    }
    REQUIRE(bnt_run("eval --aggregate" + names + " --out agg_summary.csv").code == 0);
    const auto rows = csv_rows(slurp(at("agg_summary.csv")));
    REQUIRE(rows.size() == 5);
    CHECK(rows[1][0] == "auroc");
    double mean = 0, var = 0;
    for (double v : auc) mean += v / 5;
    for (double v : auc) var += (v - mean) * (v - mean) / 5;
    CHECK(std::abs(std::stod(rows[1][1]) - mean) < 1e-15);
    CHECK(std::abs(std::stod(rows[1][2]) - std::sqrt(var)) < 1e-15);
    CHECK(rows[3][3] == "0");
    CHECK(rows[2][2] == "0");

    std::ofstream(at("not_metrics.csv")) << "a,b\n1,2\n";
    CHECK(bnt_run("eval --aggregate not_metrics.csv --out agg_bad.csv").code == 2);
}

TEST_CASE("verify-theory modes") {
    REQUIRE(bnt_run("verify-theory --mode 2d --quad-nodes 64 --out theory_2d.csv").code == 0);
    const auto rows = csv_rows(slurp(at("theory_2d.csv")));
    REQUIRE(rows.size() == 10);
    CHECK(std::stod(rows[1][1]) == 0.0);
    for (std::size_t i = 2; i < rows.size(); ++i) CHECK(std::stod(rows[i][1]) > std::stod(rows[i - 1][1]));

    REQUIRE(bnt_run("verify-theory --mode mc --samples 100000 --threads 2 --out theory_mc.csv").code == 0);
    const auto mc = csv_rows(slurp(at("theory_mc.csv")));
    REQUIRE(mc.size() == 3);
    CHECK(std::stod(mc[1][1]) > std::stod(mc[2][1]));

    REQUIRE(bnt_run("verify-theory --mode vif --out theory_vif.csv").code == 0);
    const auto v = csv_rows(slurp(at("theory_vif.csv")));
    REQUIRE(v.size() == 1 + 4 + 2);
    CHECK(std::abs(std::stod(v[1][2]) - 1.0) < 1e-9);
    CHECK(std::abs(std::stod(v[5][2]) - 1.0 / 0.19) < 1e-6);
    CHECK(bnt_run("verify-theory --mode 3d --out x.csv").code == 1);
}

TEST_CASE("ablate writes one combined CSV") {
    make_small("t.bntd", "t.split");
    REQUIRE(bnt_run("ablate --dataset t.bntd --out ablate.csv --readouts ocread,sum --centers orthonormal,random "
                    "--clusters 2 --seeds 2 --fractions 0.6,0.2,0.2 --layers 1 --heads 2 --mlp-hidden 8 --epochs 2 "
                    "--batch-size 16")
                .code == 0);
    const auto rows = csv_rows(slurp(at("ablate.csv")));
    REQUIRE(rows.size() == 1 + 2 * 2 + 2);
    CHECK(rows[0][0] == "readout");
    CHECK(rows[1][1] == "orthonormal");
    CHECK(rows[3][1] == "random");
    CHECK(rows[5][1] == "na");
    CHECK(fs::exists(at("ablate.csv.manifest")));
}

TEST_CASE("generate, split, train and eval are byte-identical across repeated runs") {
    for (const std::string tag : {"a", "b"}) {
        REQUIRE(bnt_run("generate --out det_" + tag + ".bntd " + kSmallData + " --seed 21").code == 0);
        REQUIRE(bnt_run("split --dataset det_" + tag + ".bntd --out det_" + tag + ".split --fractions 0.6,0.2,0.2 --seed 21")
                    .code == 0);
        REQUIRE(bnt_run("train --dataset det_" + tag + ".bntd --split det_" + tag + ".split --out det_" + tag + "_run " +
                        kSmallModel + " --seed 21")
                    .code == 0);
        REQUIRE(bnt_run("eval --checkpoint det_" + tag + "_run/model.bntm --dataset det_" + tag + ".bntd --split det_" +
                        tag + ".split --run-id det --out det_" + tag + ".csv")
                    .code == 0);
    }
    CHECK(slurp(at("det_a.bntd")) == slurp(at("det_b.bntd")));
    CHECK(slurp(at("det_a.split")) == slurp(at("det_b.split")));
    CHECK(slurp(at("det_a_run/model.bntm")) == slurp(at("det_b_run/model.bntm")));
    CHECK(slurp(at("det_a_run/report.txt")) == slurp(at("det_b_run/report.txt")));
    CHECK(slurp(at("det_a.csv")) == slurp(at("det_b.csv")));
}
