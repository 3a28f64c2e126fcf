#pragma once

#include "wpse/analysis.hpp"
#include "wpse/classifier.hpp"
#include "wpse/common.hpp"
#include "wpse/gap.hpp"
#include "wpse/infonce.hpp"
#include "wpse/kernel.hpp"
#include "wpse/pointset.hpp"
#include "wpse/rff.hpp"
#include "wpse/trainer.hpp"
#include "wpse/world.hpp"
