#include <algorithm>
#include <cstring>
#include <string>

#include "doctest.h"
#include "gallop/gallop.h"
#include "support.hpp"

using gallop::testing::TempDir;

namespace {

const char* kSmallSpec = R"({"num_classes": 2, "shots_per_class": 4, "d": 8, "L": 6, "noise_sigma": 0.0,
                             "test_shots_per_class": 5, "ood_records": 10})";

}  // namespace

TEST_CASE("version and status names") {
  CHECK(std::string(gallop_version()) == "0.1.0");
  CHECK(std::string(gallop_status_name(GALLOP_OK)) == "ok");
  CHECK(std::string(gallop_status_name(GALLOP_ERR_TRUNCATED)) == "truncation error");
}

TEST_CASE("null arguments are reported, not dereferenced") {
  CHECK(gallop_dataset_read(nullptr, nullptr) == GALLOP_ERR_ARGUMENT);
  CHECK(std::string(gallop_last_error()).find("null") != std::string::npos);
  CHECK(gallop_train(nullptr, nullptr, nullptr, nullptr) == GALLOP_ERR_ARGUMENT);
  gallop_dataset_free(nullptr);
  gallop_model_free(nullptr);
  gallop_config_free(nullptr);
  gallop_string_free(nullptr);
}

TEST_CASE("end to end through the C interface") {
  TempDir tmp("capi");
  gallop_dataset *train = nullptr, *id = nullptr, *ood = nullptr;
  char* spec = nullptr;
  REQUIRE(gallop_synth_generate(kSmallSpec, &train, &id, &ood, &spec) == GALLOP_OK);
  CHECK(std::string(spec).find("\"num_classes\": 2") != std::string::npos);
  gallop_string_free(spec);

  gallop_dataset_info info{};
  REQUIRE(gallop_dataset_info_get(train, &info) == GALLOP_OK);
  CHECK(info.d == 8);
  CHECK(info.L == 6);
  CHECK(info.num_classes == 2);
  CHECK(info.num_records == 8);

  const auto path = (tmp / "train.glf").string();
  REQUIRE(gallop_dataset_write(train, path.c_str()) == GALLOP_OK);
  gallop_dataset* reread = nullptr;
  REQUIRE(gallop_dataset_read(path.c_str(), &reread) == GALLOP_OK);

  gallop_config* cfg = nullptr;
  REQUIRE(gallop_config_parse(R"({"epochs": 30, "scales": {"k1": 1, "delta_k": 1}})", &cfg) == GALLOP_OK);
  CHECK(gallop_config_set_threads(cfg, 0) == GALLOP_ERR_ARGUMENT);
  REQUIRE(gallop_config_set_threads(cfg, 2) == GALLOP_OK);
  char* json = nullptr;
  REQUIRE(gallop_config_to_json(cfg, &json) == GALLOP_OK);
  CHECK(std::string(json).find("\"threads\": 2") != std::string::npos);
  gallop_string_free(json);

  gallop_model* model = nullptr;
  char* trace = nullptr;
  REQUIRE(gallop_train(cfg, reread, &model, &trace) == GALLOP_OK);
  CHECK(std::count(trace, trace + std::strlen(trace), '\n') == 30);
  gallop_string_free(trace);

  double top1 = 0.0;
  REQUIRE(gallop_evaluate(model, train, &top1) == GALLOP_OK);
  CHECK(top1 == 1.0);

  const auto ckpt = (tmp / "m.ckpt").string();
  REQUIRE(gallop_model_save(model, ckpt.c_str()) == GALLOP_OK);
  gallop_model* loaded = nullptr;
  REQUIRE(gallop_model_load(ckpt.c_str(), &loaded) == GALLOP_OK);
  char* header = nullptr;
  REQUIRE(gallop_checkpoint_header(ckpt.c_str(), &header) == GALLOP_OK);
  CHECK(std::string(header).find("gallop-checkpoint") != std::string::npos);
  gallop_string_free(header);

  gallop_ood_result r{};
  REQUIRE(gallop_score_ood(loaded, id, ood, &r) == GALLOP_OK);
  CHECK(r.auroc >= 0.0);
  CHECK(r.auroc <= 1.0);
  CHECK(r.fpr95 >= 0.0);
  CHECK(r.fpr95 <= 1.0);
  const auto csv = (tmp / "id.csv").string();
  CHECK(gallop_write_scores(loaded, id, csv.c_str()) == GALLOP_OK);
  CHECK(std::filesystem::file_size(csv) > 0);

  gallop_gradcheck_result g{};
  REQUIRE(gallop_gradcheck(cfg, train, &g) == GALLOP_OK);
  CHECK(g.passed == 1);
  CHECK(g.max_rel_error < 1e-4);
  CHECK(g.coordinates_checked == 150);

  SUBCASE("mismatched dataset is a configuration error") {
    gallop_dataset *t2 = nullptr, *i2 = nullptr, *o2 = nullptr;
    REQUIRE(gallop_synth_generate(R"({"num_classes": 3, "d": 8, "L": 6})", &t2, &i2, &o2, nullptr) == GALLOP_OK);
    CHECK(gallop_evaluate(model, t2, &top1) == GALLOP_ERR_CONFIG);
    CHECK(std::string(gallop_last_error()).find("class count") != std::string::npos);
    gallop_dataset_free(t2);
    gallop_dataset_free(i2);
    gallop_dataset_free(o2);
  }

  gallop_model_free(loaded);
  gallop_model_free(model);
  gallop_config_free(cfg);
  gallop_dataset_free(reread);
  gallop_dataset_free(train);
  gallop_dataset_free(id);
  gallop_dataset_free(ood);
}

TEST_CASE("errors map onto status codes") {
  gallop_config* cfg = nullptr;
  CHECK(gallop_config_parse(R"({"bogus": 1})", &cfg) == GALLOP_ERR_CONFIG);
  CHECK(cfg == nullptr);
  gallop_dataset* ds = nullptr;
  CHECK(gallop_dataset_read("/nonexistent/file.glf", &ds) == GALLOP_ERR_IO);
  CHECK(gallop_config_load("/nonexistent/cfg.json", &cfg) == GALLOP_ERR_IO);
  gallop_dataset *a = nullptr, *b = nullptr, *c = nullptr;
  CHECK(gallop_synth_generate(R"({"d": 1, "num_classes": 2})", &a, &b, &c, nullptr) == GALLOP_ERR_CONFIG);
}
