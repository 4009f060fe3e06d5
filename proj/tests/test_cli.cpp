#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"

#include "gca/evaluation.hpp"
#include "gca/model.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "gca_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct Run {
  int code;
  std::string out;
};

Run cli(const std::string& args) {
  const fs::path out = work_dir() / "stdout.txt";
  const std::string cmd = std::string(GCA_CLI_PATH) + " " + args + " >" + out.string() + " 2>" +
                          (work_dir() / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string path(const std::string& name) { return (work_dir() / name).string(); }

// Small and quick: a few epochs at desk sizes.
const char* kQuick = "--preset desk --initial_teacher_forcing_epochs 2 --embed_dim 4 --gen_hidden 6 --disc_hidden 4 "
                     "--dense_width 6";

}  // namespace

TEST_CASE("usage errors exit 1") {
  CHECK(cli("").code == 1);
  CHECK(cli("frobnicate").code == 1);
  CHECK(cli("train").code == 1);  // --out is required
  CHECK(cli("train --out " + path("x") + " --no-such-flag 1").code == 1);
  CHECK(cli("train --out " + path("x") + " --preset huge").code == 1);
  CHECK(cli("train --out " + path("x") + " --seq_len notanumber").code == 1);
  CHECK(cli("train --out " + path("x") + " --batch_size 0").code == 1);
  CHECK(cli("--help").code == 0);
}

TEST_CASE("data-format errors exit 2") {
  CHECK(cli("train --out " + path("x") + " --corpus " + path("absent.txt")).code == 2);
  CHECK(cli("eval-report --votes " + path("absent.jsonl")).code == 2);
  {
    std::ofstream bad(path("bad_votes.jsonl"));
    bad << "{\"line_id\":1}\n";
  }
  CHECK(cli("eval-report --votes " + path("bad_votes.jsonl")).code == 2);
  {
    std::ofstream junk(path("junk.gcaw"));
    junk << "not a weight file";
  }
  fs::create_directories(path("junk_model"));
  fs::copy_file(path("junk.gcaw"), path("junk_model") + "/weights.gcaw", fs::copy_options::overwrite_existing);
  CHECK(cli("rank --scorer " + path("junk_model") + " --context hi --answer a=hi").code == 2);
}

TEST_CASE("config file overrides flags, flags override defaults") {
  {
    std::ofstream cfg(path("cfg.json"));
    cfg << R"({"embed_dim": 5, "seed": 11})";
  }
  REQUIRE(cli(std::string("train ") + kQuick + " --seed 4 --config " + path("cfg.json") + " --out " + path("m_cfg"))
              .code == 0);
  const gca::Model m = gca::Model::load(path("m_cfg") + "/weights.gcaw");
  CHECK(m.config.embed_dim == 5);   // file beats --embed_dim 4
  CHECK(m.config.gen_hidden == 6);  // flag beats the preset
  CHECK(m.config.seq_len == 12);    // desk preset default

  REQUIRE(cli("train --preset desk --initial_teacher_forcing_epochs 2 --embed_dim 5 --gen_hidden 6 --disc_hidden 4 "
              "--dense_width 6 --seed 11 --out " + path("m_flags"))
              .code == 0);
  CHECK(gca::Model::load(path("m_flags") + "/weights.gcaw").generator_checksum() == m.generator_checksum());

  {
    std::ofstream cfg(path("cfg_bad.json"));
    cfg << R"({"embedding_size": 5})";
  }
  CHECK(cli(std::string("train ") + kQuick + " --config " + path("cfg_bad.json") + " --out " + path("m_bad")).code ==
        1);
}

TEST_CASE("train, rank, selfconv and eval-report") {
  REQUIRE(cli(std::string("train ") + kQuick + " --out " + path("model") + " --log " + path("train.jsonl")).code == 0);
  CHECK(fs::exists(path("model") + "/weights.gcaw"));
  CHECK(fs::exists(path("model") + "/vocab.txt"));
  std::ifstream log(path("train.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(log, line)) {
    CHECK(json::parse(line).at("phase") == "teacher-forcing");
    ++n;
  }
  CHECK(n == 2);

  const Run ranked = cli("rank --scorer " + path("model") + " --context \"hello <sep> hi\" --answer a=\"fine thanks\" "
                         "--answer b=\"no\" --generator g=" + path("model"));
  REQUIRE(ranked.code == 0);
  const json r = json::parse(ranked.out);
  CHECK(r.at("candidates").size() == 3);
  CHECK(r.contains("winner"));
  CHECK(r.contains("tie"));
  CHECK(cli("rank --scorer " + path("model") + " --context hi --answer nonsense").code == 1);

  REQUIRE(cli(std::string("selfconv ") + kQuick + " --machine_set_size 5 --model " + path("model") + " --out " +
              path("m.jsonl"))
              .code == 0);
  std::ifstream machine(path("m.jsonl"));
  n = 0;
  while (std::getline(machine, line)) {
    const json j = json::parse(line);
    CHECK(j.contains("context"));
    CHECK(j.contains("answer"));
    CHECK(j.contains("seed_index"));
    ++n;
  }
  CHECK(n == 5);

  {
    gca::VoteStore store(path("votes.jsonl"));
    store.append({"s1-1", "tf", gca::VoteSource::human});
    store.append({"s1-1", "tf", gca::VoteSource::adversarial});
    store.append({"s1-2", "adv", gca::VoteSource::human});
    store.append({"s1-2", "tf", gca::VoteSource::adversarial});
  }
  const Run rep = cli("eval-report --votes " + path("votes.jsonl") + " --models tf adv");
  REQUIRE(rep.code == 0);
  const json j = json::parse(rep.out);
  CHECK(j.at("counts").at("tf") == 1);
  CHECK(j.at("percentages").at("adv") == 50.0);
  CHECK(j.at("jaccard") == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("adversarial-train writes checkpoints") {
  const std::string args = std::string("adversarial-train ") + kQuick +
                           " --adversarial_epochs 1 --discriminator_epochs 1 --machine_set_size 4 --out " +
                           path("adv") + " --checkpoint-dir " + path("ckpt") + " --log " + path("adv.jsonl");
  REQUIRE(cli(args).code == 0);
  CHECK(fs::exists(path("ckpt") + "/epoch_1.gcaw"));
  CHECK(fs::exists(path("adv") + "/weights.gcaw"));
  std::ifstream log(path("adv.jsonl"));
  std::string line;
  std::vector<std::string> phases;
  while (std::getline(log, line)) phases.push_back(json::parse(line).at("phase"));
  CHECK(phases == std::vector<std::string>{"initial-tf", "selfconv", "d-train", "g-adversarial", "teacher-forcing"});
}
