#pragma once

// Umbrella include.

#include "adpo/checkpoint.hpp"
#include "adpo/dataset.hpp"
#include "adpo/errors.hpp"
#include "adpo/eval.hpp"
#include "adpo/graph.hpp"
#include "adpo/losses.hpp"
#include "adpo/manifest.hpp"
#include "adpo/model.hpp"
#include "adpo/optimizer.hpp"
#include "adpo/pca.hpp"
#include "adpo/perturb.hpp"
#include "adpo/pipeline.hpp"
#include "adpo/rng.hpp"
#include "adpo/tensor.hpp"
#include "adpo/trainer.hpp"
