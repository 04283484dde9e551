#pragma once

#include "ssvh/autoencoder.hpp"
#include "ssvh/datagen.hpp"
#include "ssvh/error.hpp"
#include "ssvh/neighborhood.hpp"
#include "ssvh/numerics.hpp"
#include "ssvh/recurrent.hpp"
#include "ssvh/retrieval.hpp"
#include "ssvh/trainer.hpp"
