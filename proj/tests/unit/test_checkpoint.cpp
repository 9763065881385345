#include <gtest/gtest.h>

#include "draglora/checkpoint.hpp"
#include "draglora/pipeline.hpp"
#include "draglora/toyworld.hpp"

// Quality checks on the committed toy checkpoint.

using namespace draglora;

namespace {

const std::string kCkpt = std::string(DRAGLORA_REPO_DATA) + "/toy.dlc";

// seed disjoint from the training set (0) and the task suite (1000)
constexpr std::uint64_t kHeldOut = 4242;

struct Loaded {
  Checkpoint ck = load_checkpoint(kCkpt);
  ToyUNet<float> model = ck.model();
  NoiseSchedule sched = ck.schedule.build();
};

const Loaded& loaded() {
  static const Loaded l;
  return l;
}

double rel_l2(const Tensor<float>& a, const Tensor<float>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += double(a[i] - b[i]) * double(a[i] - b[i]);
    den += double(b[i]) * double(b[i]);
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST(Checkpoint, CommittedFileLoadsAndMatchesArchitecture) {
  const auto& l = loaded();
  EXPECT_EQ(l.model.latent_shape(), (std::vector<int>{3, 32, 32}));
  EXPECT_EQ(l.model.lora_sites().size(), 16u);
  EXPECT_EQ(l.ck.model_hash().size(), 16u);
  EXPECT_EQ(l.sched.inference_steps, 50);
}

TEST(Checkpoint, InversionRoundTripOnHeldOutImages) {
  const auto& l = loaded();
  const auto data = gen_dataset(kHeldOut, 10);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto traj = invert_to<float>(data[i].image, l.model, nullptr, l.sched, 35, data[i].cls);
    const auto back = denoise<float>(traj.back(), l.model, nullptr, l.sched, 35, 0, data[i].cls);
    EXPECT_LT(rel_l2(back, data[i].image), 0.05) << "held-out image " << i;
  }
}

TEST(Checkpoint, ReconstructionLoraLowersValidationLoss) {
  const auto& l = loaded();
  const auto data = gen_dataset(kHeldOut, 3);
  for (std::size_t i = 0; i < data.size(); ++i) {
    ReconReport rep;
    train_reconstruction_lora<float>(l.model, data[i].image, data[i].cls, l.sched, ReconConfig{}, 7 + i, &rep);
    EXPECT_LE(rep.validation_after, 0.8 * rep.validation_before)
        << "image " << i << ": " << rep.validation_before << " -> " << rep.validation_after;
  }
}

TEST(Checkpoint, ReconstructionAdapterKeepsRoundTrip) {
  const auto& l = loaded();
  const auto x = gen_dataset(kHeldOut, 1)[0];
  const auto rec = train_reconstruction_lora<float>(l.model, x.image, x.cls, l.sched, ReconConfig{}, 7);
  const auto traj = invert_to<float>(x.image, l.model, &rec, l.sched, 35, x.cls);
  const auto back = denoise<float>(traj.back(), l.model, &rec, l.sched, 35, 0, x.cls);
  EXPECT_LE(rel_l2(back, x.image), 0.05);
}
