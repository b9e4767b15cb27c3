#pragma once

#include "segvm/common.hpp"
#include "segvm/embed_net.hpp"
#include "segvm/evaluation.hpp"
#include "segvm/feature_store.hpp"
#include "segvm/parallel.hpp"
#include "segvm/ranking.hpp"
#include "segvm/segmentation.hpp"
#include "segvm/trainer.hpp"
