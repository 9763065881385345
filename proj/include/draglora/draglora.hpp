#pragma once

// Everything except the HTTP service (service.hpp pulls in cpp-httplib).

#include "draglora/autodiff.hpp"
#include "draglora/checkpoint.hpp"
#include "draglora/eval.hpp"
#include "draglora/features.hpp"
#include "draglora/ilfa.hpp"
#include "draglora/image_io.hpp"
#include "draglora/log.hpp"
#include "draglora/lora.hpp"
#include "draglora/losses.hpp"
#include "draglora/metrics.hpp"
#include "draglora/ops.hpp"
#include "draglora/pipeline.hpp"
#include "draglora/records.hpp"
#include "draglora/rng.hpp"
#include "draglora/schedule.hpp"
#include "draglora/tasks.hpp"
#include "draglora/tensor.hpp"
#include "draglora/toyworld.hpp"
#include "draglora/tracking.hpp"
#include "draglora/unet.hpp"
